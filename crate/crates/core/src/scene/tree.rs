use serde::{Deserialize, Serialize};

use super::{JointTypeMatrix, LinkId, SceneError};

/// Directed spanning tree over links 1..=K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStructure {
    pub k: usize,
    pub root: LinkId,
    /// (parent, child) pairs; K - 1 of them.
    pub edges: Vec<(LinkId, LinkId)>,
}

impl TreeStructure {
    /// Validate an edge list as a spanning arborescence and locate its root.
    pub fn from_edges(k: usize, edges: Vec<(LinkId, LinkId)>) -> Result<Self, SceneError> {
        if k == 0 {
            return Err(SceneError::TooFewLinks { need: 1, got: 0 });
        }
        if edges.len() != k - 1 {
            return Err(SceneError::NotATree(format!(
                "{} edges for {k} nodes",
                edges.len()
            )));
        }
        let mut parent = vec![0usize; k + 1];
        for &(u, v) in &edges {
            if u == 0 || v == 0 || u > k || v > k {
                return Err(SceneError::NotATree(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(SceneError::NotATree(format!("self loop at {u}")));
            }
            if parent[v] != 0 {
                return Err(SceneError::NotATree(format!("node {v} has two parents")));
            }
            parent[v] = u;
        }
        let roots: Vec<LinkId> = (1..=k).filter(|&v| parent[v] == 0).collect();
        if roots.len() != 1 {
            return Err(SceneError::NotATree(format!("roots {roots:?}")));
        }
        let root = roots[0];
        for start in 1..=k {
            let mut v = start;
            let mut steps = 0;
            while v != root {
                v = parent[v];
                steps += 1;
                if steps > k {
                    return Err(SceneError::NotATree(format!("cycle through {start}")));
                }
            }
        }
        Ok(TreeStructure { k, root, edges })
    }

    pub fn parent(&self, v: LinkId) -> Option<LinkId> {
        self.edges.iter().find(|e| e.1 == v).map(|e| e.0)
    }

    pub fn children(&self, u: LinkId) -> Vec<LinkId> {
        let mut c: Vec<LinkId> = self.edges.iter().filter(|e| e.0 == u).map(|e| e.1).collect();
        c.sort_unstable();
        c
    }

    /// Breadth-first order from the root, children by ascending id.
    pub fn topological_order(&self) -> Vec<LinkId> {
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            let u = order[i];
            order.extend(self.children(u));
            i += 1;
        }
        order
    }

    /// `v` and all of its descendants.
    pub fn subtree(&self, v: LinkId) -> Vec<LinkId> {
        let mut out = vec![v];
        let mut i = 0;
        while i < out.len() {
            let u = out[i];
            out.extend(self.children(u));
            i += 1;
        }
        out
    }

    /// Ancestors from the root down to `v`'s parent.
    pub fn path_from_root(&self, v: LinkId) -> Vec<LinkId> {
        let mut path = Vec::new();
        let mut cur = v;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

/// Edge weight used by [`greedy_tree`]: probability that a joint exists.
pub fn edge_weight(j: &JointTypeMatrix, u: LinkId, v: LinkId) -> f64 {
    1.0 - j.p_none(u, v)
}

/// Prim-style maximum-weight arborescence growth.
///
/// The root maximizes total outgoing weight. Each step attaches the heaviest
/// edge leaving the current tree. Ties go to the smaller parent index, then
/// the smaller child index.
pub fn greedy_tree(j: &JointTypeMatrix) -> Result<TreeStructure, SceneError> {
    let k = j.k;
    if k < 2 {
        return Err(SceneError::TooFewLinks { need: 2, got: k });
    }
    let mut root = 1;
    let mut best = f64::NEG_INFINITY;
    for u in 1..=k {
        let w: f64 = (1..=k).filter(|&v| v != u).map(|v| edge_weight(j, u, v)).sum();
        if w > best {
            best = w;
            root = u;
        }
    }
    let mut in_tree = vec![false; k + 1];
    in_tree[root] = true;
    let mut edges = Vec::with_capacity(k - 1);
    for _ in 1..k {
        let mut pick: Option<(LinkId, LinkId, f64)> = None;
        for u in (1..=k).filter(|&u| in_tree[u]) {
            for v in (1..=k).filter(|&v| !in_tree[v]) {
                let w = edge_weight(j, u, v);
                if pick.is_none_or(|(_, _, bw)| w > bw) {
                    pick = Some((u, v, w));
                }
            }
        }
        let (u, v, _) = pick.expect("a node outside the tree remains");
        in_tree[v] = true;
        edges.push((u, v));
    }
    TreeStructure::from_edges(k, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_p_none(k: usize, f: impl Fn(usize, usize) -> f64) -> JointTypeMatrix {
        let mut j = JointTypeMatrix::zeros(k);
        for u in 1..=k {
            for v in 1..=k {
                if u != v {
                    // None slot alone against a uniform rest gives P_None = p
                    let p: f64 = f(u, v);
                    let rest = (1.0 - p) / 3.0;
                    *j.get_mut(u, v) = [p.ln(), rest.ln(), rest.ln(), rest.ln()];
                }
            }
        }
        j
    }

    #[test]
    fn two_nodes() {
        let j = with_p_none(2, |u, v| if (u, v) == (1, 2) { 0.1 } else { 0.5 });
        let t = greedy_tree(&j).unwrap();
        assert_eq!(t.root, 1);
        assert_eq!(t.edges, vec![(1, 2)]);
    }

    /// All 9 rooted spanning arborescences on three labelled nodes.
    fn all_arborescences_3() -> Vec<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        let pairs: Vec<(usize, usize)> = (1..=3)
            .flat_map(|u| (1..=3).filter(move |&v| v != u).map(move |v| (u, v)))
            .collect();
        for a in 0..pairs.len() {
            for b in a + 1..pairs.len() {
                let e = vec![pairs[a], pairs[b]];
                if TreeStructure::from_edges(3, e.clone()).is_ok() {
                    out.push(e);
                }
            }
        }
        out
    }

    #[test]
    fn chain_recovered_and_matches_enumeration() {
        let gt = [(1, 2), (2, 3)];
        let j = with_p_none(3, |u, v| if gt.contains(&(u, v)) { 0.05 } else { 0.9 });
        let t = greedy_tree(&j).unwrap();
        assert_eq!(t.edges, gt.to_vec());

        let trees = all_arborescences_3();
        assert_eq!(trees.len(), 9);
        let score = |e: &Vec<(usize, usize)>| e.iter().map(|&(u, v)| edge_weight(&j, u, v)).sum::<f64>();
        let best = trees.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
        assert!((score(&t.edges) - best).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_give_star_from_node_one() {
        let j = JointTypeMatrix::zeros(4);
        let t = greedy_tree(&j).unwrap();
        assert_eq!(t.root, 1);
        assert_eq!(t.edges, vec![(1, 2), (1, 3), (1, 4)]);
    }

    #[test]
    fn single_node_rejected() {
        assert!(matches!(
            greedy_tree(&JointTypeMatrix::zeros(1)),
            Err(SceneError::TooFewLinks { .. })
        ));
    }

    #[test]
    fn from_edges_rejects_non_trees() {
        assert!(TreeStructure::from_edges(3, vec![(1, 2), (2, 1)]).is_err());
        assert!(TreeStructure::from_edges(3, vec![(1, 2), (3, 2)]).is_err());
        assert!(TreeStructure::from_edges(3, vec![(1, 2)]).is_err());
        let t = TreeStructure::from_edges(4, vec![(2, 1), (2, 3), (3, 4)]).unwrap();
        assert_eq!(t.root, 2);
        assert_eq!(t.subtree(3), vec![3, 4]);
        assert_eq!(t.path_from_root(4), vec![2, 3]);
        assert_eq!(t.topological_order(), vec![2, 1, 3, 4]);
    }
}
