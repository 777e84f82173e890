use std::collections::VecDeque;

use crate::{Error, Result};

/// Named joint topology: a tree over `V` joints plus the reference joints
/// used by pre-normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    name: String,
    parent: Vec<usize>,
    root: usize,
    center: usize,
    spine: (usize, usize),
    shoulders: Option<(usize, usize)>,
    edges: Vec<(usize, usize)>,
}

// Kinect v2 bones, 0-based (child, parent) as listed by the NTU convention.
const NTU25_BONES: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (21, 22),
    (22, 7),
    (23, 24),
    (24, 11),
];

const COCO17_BONES: [(usize, usize); 16] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 5),
    (12, 6),
    (9, 7),
    (7, 5),
    (10, 8),
    (8, 6),
    (5, 0),
    (6, 0),
    (1, 0),
    (3, 1),
    (2, 0),
    (4, 2),
];

/// Returns one of the built-in layouts: `"ntu25"` or `"coco17"`.
pub fn builtin_layout(name: &str) -> Result<JointLayout> {
    match name {
        // center: middle of spine; spine: base of spine -> middle of spine
        "ntu25" => JointLayout::from_edges("ntu25", 25, &NTU25_BONES, 1, (0, 1), Some((8, 4))),
        // nose-centred tree; spine approximated by left hip -> left shoulder
        "coco17" => JointLayout::from_edges("coco17", 17, &COCO17_BONES, 0, (11, 5), Some((6, 5))),
        other => Err(Error::Name(format!("no built-in layout named {other:?}"))),
    }
}

impl JointLayout {
    /// Builds a layout from undirected edges, rooting the tree at `center`.
    pub fn from_edges(
        name: &str,
        num_joints: usize,
        edges: &[(usize, usize)],
        center: usize,
        spine: (usize, usize),
        shoulders: Option<(usize, usize)>,
    ) -> Result<Self> {
        if num_joints == 0 || center >= num_joints {
            return Err(Error::Spec(format!(
                "center {center} out of range for {num_joints} joints"
            )));
        }
        if edges.len() + 1 != num_joints {
            return Err(Error::Spec(format!(
                "a tree on {num_joints} joints needs {} edges, got {}",
                num_joints - 1,
                edges.len()
            )));
        }
        let mut nbrs = vec![Vec::new(); num_joints];
        for &(a, b) in edges {
            if a >= num_joints || b >= num_joints || a == b {
                return Err(Error::Spec(format!("invalid edge ({a}, {b})")));
            }
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        let mut parent = vec![usize::MAX; num_joints];
        parent[center] = center;
        let mut queue = VecDeque::from([center]);
        while let Some(u) = queue.pop_front() {
            for &w in &nbrs[u] {
                if parent[w] == usize::MAX {
                    parent[w] = u;
                    queue.push_back(w);
                }
            }
        }
        if parent.contains(&usize::MAX) {
            return Err(Error::Spec(format!(
                "edges of layout {name} do not form a connected tree"
            )));
        }
        Self::from_parents(name, parent, center, spine, shoulders)
    }

    /// Builds a layout from a parent array. Exactly one joint must be its own
    /// parent and every joint must reach it.
    pub fn from_parents(
        name: &str,
        parent: Vec<usize>,
        center: usize,
        spine: (usize, usize),
        shoulders: Option<(usize, usize)>,
    ) -> Result<Self> {
        let v = parent.len();
        let in_range = |j: usize| j < v;
        if v == 0 {
            return Err(Error::Spec("layout needs at least one joint".into()));
        }
        if !in_range(center) || !in_range(spine.0) || !in_range(spine.1) {
            return Err(Error::Spec("center or spine index out of range".into()));
        }
        if v > 1 && spine.0 == spine.1 {
            return Err(Error::Spec("spine base and tip must differ".into()));
        }
        if let Some((a, b)) = shoulders {
            if !in_range(a) || !in_range(b) || a == b {
                return Err(Error::Spec("invalid shoulder pair".into()));
            }
        }
        if parent.iter().any(|&p| !in_range(p)) {
            return Err(Error::Spec("parent index out of range".into()));
        }
        let roots: Vec<usize> = (0..v).filter(|&j| parent[j] == j).collect();
        if roots.len() != 1 {
            return Err(Error::Spec(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        for start in 0..v {
            let mut j = start;
            let mut steps = 0;
            while j != root {
                j = parent[j];
                steps += 1;
                if steps > v {
                    return Err(Error::Spec(format!(
                        "joint {start} does not reach the root"
                    )));
                }
            }
        }
        let edges = (0..v)
            .filter(|&j| j != root)
            .map(|j| (j, parent[j]))
            .collect();
        Ok(Self {
            name: name.to_string(),
            parent,
            root,
            center,
            spine,
            shoulders,
            edges,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self) -> &[usize] {
        &self.parent
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn spine(&self) -> (usize, usize) {
        self.spine
    }

    pub fn shoulders(&self) -> Option<(usize, usize)> {
        self.shoulders
    }

    /// `(child, parent)` pairs, one per non-root joint.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of tree hops from every joint to `target`.
    pub fn hop_distances(&self, target: usize) -> Vec<usize> {
        let v = self.num_joints();
        let mut nbrs = vec![Vec::new(); v];
        for &(a, b) in &self.edges {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        let mut dist = vec![usize::MAX; v];
        dist[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(u) = queue.pop_front() {
            for &w in &nbrs[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// The built-in layout with `num_joints` joints, if any.
    pub fn builtin_for_joints(num_joints: usize) -> Option<Self> {
        match num_joints {
            25 => builtin_layout("ntu25").ok(),
            17 => builtin_layout("coco17").ok(),
            _ => None,
        }
    }
}
