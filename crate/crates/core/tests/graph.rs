use proptest::prelude::*;
use skelact::graph::{
    build_adjacency, normalize_symmetric, partition_spatial, partition_supports, CENTRIFUGAL,
    CENTRIPETAL,
};
use skelact::skeleton::{builtin_layout, JointLayout};

/// Random tree: joint `j > 0` hangs off a uniformly chosen earlier joint.
fn tree() -> impl Strategy<Value = JointLayout> {
    (2usize..40)
        .prop_flat_map(|v| {
            (
                Just(v),
                prop::collection::vec(any::<prop::sample::Index>(), v - 1),
                any::<prop::sample::Index>(),
            )
        })
        .prop_map(|(v, picks, c)| {
            let edges: Vec<(usize, usize)> = picks
                .iter()
                .enumerate()
                .map(|(i, p)| (i + 1, p.index(i + 1)))
                .collect();
            let center = c.index(v);
            let tip = if center == 0 { 1 } else { 0 };
            JointLayout::from_edges("random", v, &edges, center, (center, tip), None).unwrap()
        })
}

/// Hop distances by repeated relaxation over the edge list.
fn hops(layout: &JointLayout) -> Vec<usize> {
    let v = layout.num_joints();
    let mut d = vec![usize::MAX; v];
    d[layout.center()] = 0;
    for _ in 0..v {
        for &(a, b) in layout.edges() {
            if d[a] != usize::MAX {
                d[b] = d[b].min(d[a] + 1);
            }
            if d[b] != usize::MAX {
                d[a] = d[a].min(d[b] + 1);
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partitions_are_disjoint_and_cover_the_adjacency(layout in tree()) {
        let v = layout.num_joints();
        let a = build_adjacency(&layout);
        let sup = partition_supports(&layout);
        let d = hops(&layout);
        for i in 0..v {
            for j in 0..v {
                let count: f64 = sup.matrices.iter().map(|m| m[i][j]).sum();
                prop_assert_eq!(count, a[i][j]);
                if i != j && a[i][j] == 1.0 {
                    let k = if d[j] < d[i] { CENTRIPETAL } else { CENTRIFUGAL };
                    prop_assert_eq!(sup.matrices[k][i][j], 1.0);
                }
            }
        }
    }

    #[test]
    fn normalized_partitions_sum_to_normalized_adjacency(layout in tree()) {
        let set = partition_spatial(&layout);
        let want = normalize_symmetric(&build_adjacency(&layout));
        let got = set.sum();
        for (r, w) in got.iter().zip(&want) {
            for (x, y) in r.iter().zip(w) {
                prop_assert!((x - y).abs() < 1e-15);
                prop_assert!(x.is_finite() && *x >= 0.0);
            }
        }
    }

    #[test]
    fn normalization_matches_defining_equation(
        entries in prop::collection::vec(0.0f64..3.0, 1..50),
    ) {
        let n = (entries.len() as f64).sqrt() as usize;
        prop_assume!(n >= 1);
        let a: Vec<Vec<f64>> = (0..n).map(|i| entries[i * n..(i + 1) * n].to_vec()).collect();
        let out = normalize_symmetric(&a);
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let want = if deg[i] > 0.0 && deg[j] > 0.0 { a[i][j] / (deg[i] * deg[j]).sqrt() } else { 0.0 };
                prop_assert!((out[i][j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parent_chains_reach_the_root(layout in tree()) {
        let v = layout.num_joints();
        for start in 0..v {
            let mut j = start;
            let mut steps = 0;
            while j != layout.root() {
                j = layout.parent()[j];
                steps += 1;
                prop_assert!(steps <= v);
            }
        }
    }
}

#[test]
fn builtin_layouts_have_tree_edge_counts() {
    for (name, v) in [("ntu25", 25), ("coco17", 17)] {
        let l = builtin_layout(name).unwrap();
        assert_eq!(l.num_joints(), v);
        assert_eq!(l.edges().len(), v - 1);
        let nnz: usize = build_adjacency(&l)
            .iter()
            .flatten()
            .filter(|x| **x != 0.0)
            .count();
        assert_eq!(nnz, v + 2 * (v - 1));
    }
    assert!(matches!(
        builtin_layout("ntu26"),
        Err(skelact::Error::Name(_))
    ));
}

#[test]
fn three_node_path_normalization() {
    // degrees 2, 3, 2
    let a = vec![
        vec![1.0, 1.0, 0.0],
        vec![1.0, 1.0, 1.0],
        vec![0.0, 1.0, 1.0],
    ];
    let n = normalize_symmetric(&a);
    let s6 = 1.0 / 6f64.sqrt();
    let want = [[0.5, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, 0.5]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((n[i][j] - want[i][j]).abs() < 1e-12);
        }
    }
}
