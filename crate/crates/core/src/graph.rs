//! Joint adjacency, degree normalization and spatial partitioning.
//!
//! Matrices are indexed `[i][j]` with `i` the joint whose row is being
//! described and `j` its neighbor. In the graph convolution the coefficient
//! `A[w][v]` carries features from joint `w` into joint `v`.

use crate::skeleton::JointLayout;

pub type Matrix = Vec<Vec<f64>>;

/// Index of each partition in an [`AdjacencySet`].
pub const SELF_PARTITION: usize = 0;
pub const CENTRIPETAL: usize = 1;
pub const CENTRIFUGAL: usize = 2;

/// `K` coefficient matrices over the joints of one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySet {
    pub matrices: Vec<Matrix>,
    pub num_joints: usize,
    pub normalized: bool,
}

impl AdjacencySet {
    pub fn num_partitions(&self) -> usize {
        self.matrices.len()
    }

    /// Row-major `[K][V][V]` copy.
    pub fn to_flat(&self) -> Vec<f64> {
        self.matrices.iter().flatten().flatten().copied().collect()
    }

    /// Element-wise sum over partitions.
    pub fn sum(&self) -> Matrix {
        let v = self.num_joints;
        let mut out = vec![vec![0.0; v]; v];
        for m in &self.matrices {
            for (o, r) in out.iter_mut().zip(m) {
                for (a, b) in o.iter_mut().zip(r) {
                    *a += b;
                }
            }
        }
        out
    }
}

/// Binary symmetric adjacency with self-loops.
pub fn build_adjacency(layout: &JointLayout) -> Matrix {
    let v = layout.num_joints();
    let mut a = vec![vec![0.0; v]; v];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(c, p) in layout.edges() {
        a[c][p] = 1.0;
        a[p][c] = 1.0;
    }
    a
}

/// `D^{-1/2} A D^{-1/2}` with `D` the diagonal of row sums. Zero-degree rows
/// and columns come out as zero.
pub fn normalize_symmetric(a: &Matrix) -> Matrix {
    let inv_sqrt: Vec<f64> = a
        .iter()
        .map(|row| {
            let d: f64 = row.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &x)| inv_sqrt[i] * x * inv_sqrt[j])
                .collect()
        })
        .collect()
}

/// Self / centripetal / centrifugal partitions relative to the layout center.
///
/// The adjacency-plus-identity matrix is degree-normalized as a whole and
/// then split, so `Σ_k A_k` equals [`normalize_symmetric`] of
/// [`build_adjacency`].
pub fn partition_spatial(layout: &JointLayout) -> AdjacencySet {
    let v = layout.num_joints();
    let dist = layout.hop_distances(layout.center());
    let norm = normalize_symmetric(&build_adjacency(layout));
    let mut parts = vec![vec![vec![0.0; v]; v]; 3];
    for i in 0..v {
        for j in 0..v {
            if norm[i][j] == 0.0 {
                continue;
            }
            let k = if i == j {
                SELF_PARTITION
            } else if dist[j] < dist[i] {
                CENTRIPETAL
            } else {
                CENTRIFUGAL
            };
            parts[k][i][j] = norm[i][j];
        }
    }
    AdjacencySet {
        matrices: parts,
        num_joints: v,
        normalized: true,
    }
}

/// Unnormalized partition supports (entries 0/1).
pub fn partition_supports(layout: &JointLayout) -> AdjacencySet {
    let mut set = partition_spatial(layout);
    for m in &mut set.matrices {
        for x in m.iter_mut().flatten() {
            if *x != 0.0 {
                *x = 1.0;
            }
        }
    }
    set.normalized = false;
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::builtin_layout;

    fn chain2() -> JointLayout {
        JointLayout::from_parents("chain2", vec![0, 0], 0, (0, 1), None).unwrap()
    }

    #[test]
    fn two_joint_chain_adjacency() {
        assert_eq!(
            build_adjacency(&chain2()),
            vec![vec![1.0, 1.0], vec![1.0, 1.0]]
        );
    }

    #[test]
    fn ntu25_adjacency_is_symmetric_with_73_nonzeros() {
        let a = build_adjacency(&builtin_layout("ntu25").unwrap());
        let nnz = a.iter().flatten().filter(|&&x| x != 0.0).count();
        assert_eq!(nnz, 73);
        for i in 0..25 {
            for j in 0..25 {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
    }

    #[test]
    fn normalize_identity_and_full_block() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(normalize_symmetric(&eye), eye);
        let full = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        for x in normalize_symmetric(&full).iter().flatten() {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_degree_rows_map_to_zero() {
        let a = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(
            normalize_symmetric(&a),
            vec![vec![0.0, 0.0], vec![0.0, 1.0]]
        );
    }

    #[test]
    fn two_joint_chain_partition() {
        let p = partition_supports(&chain2());
        assert_eq!(
            p.matrices[SELF_PARTITION],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
        assert_eq!(
            p.matrices[CENTRIPETAL],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]]
        );
        assert_eq!(
            p.matrices[CENTRIFUGAL],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]]
        );
    }

    #[test]
    fn star_centripetal_holds_every_leaf_to_hub_entry() {
        let star = JointLayout::from_parents("star", vec![0, 0, 0, 0, 0], 0, (0, 1), None).unwrap();
        let p = partition_supports(&star);
        for leaf in 1..5 {
            assert_eq!(p.matrices[CENTRIPETAL][leaf][0], 1.0);
            assert_eq!(p.matrices[CENTRIFUGAL][0][leaf], 1.0);
        }
        let nnz = p.matrices[CENTRIPETAL]
            .iter()
            .flatten()
            .filter(|&&x| x != 0.0)
            .count();
        assert_eq!(nnz, 4);
    }
}
