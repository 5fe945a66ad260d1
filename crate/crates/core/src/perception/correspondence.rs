use super::PerceptionError;
use crate::par::Exec;

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// (squared distance, index) ordering: exact ties go to the smaller index.
fn better(d: f64, i: usize, best: (f64, usize)) -> bool {
    d < best.0 || (d == best.0 && i < best.1)
}

/// Index of the point nearest to `q` by linear scan.
pub fn brute_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> Option<usize> {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if better(d, i, best) {
            best = (d, i);
        }
    }
    (best.1 != usize::MAX).then_some(best.1)
}

#[derive(Debug, Clone)]
struct Node {
    idx: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static 3-d tree over a borrowed point set. Queries give exactly the
/// answer of [`brute_nearest`], including tie-breaking.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut idx, 0, &mut nodes);
        KdTree { points, nodes, root }
    }

    fn build_rec(points: &[[f64; 3]], idx: &mut [usize], depth: usize, nodes: &mut Vec<Node>) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let here = nodes.len();
        nodes.push(Node {
            idx: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, &mut rest[1..], depth + 1, nodes);
        nodes[here].left = left;
        nodes[here].right = right;
        Some(here)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest(&self, q: &[f64; 3]) -> Option<usize> {
        let mut best = (f64::INFINITY, usize::MAX);
        if let Some(r) = self.root {
            self.search(r, q, &mut best);
        }
        (best.1 != usize::MAX).then_some(best.1)
    }

    fn search(&self, n: usize, q: &[f64; 3], best: &mut (f64, usize)) {
        let node = &self.nodes[n];
        let p = &self.points[node.idx];
        let d = dist2(p, q);
        if better(d, node.idx, *best) {
            *best = (d, node.idx);
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        // equality still descends so that index ties resolve like the scan
        if let Some(c) = far {
            if diff * diff <= best.0 {
                self.search(c, q, best);
            }
        }
    }
}

/// For each `i`, the point of `next` nearest to `p_t[i] + flow[i]`.
pub fn real_correspondence(
    p_t: &[[f64; 3]],
    flow: &[[f64; 3]],
    next: &[[f64; 3]],
    exec: Exec,
) -> Result<Vec<[f64; 3]>, PerceptionError> {
    if next.is_empty() {
        return Err(PerceptionError::Empty("target cloud"));
    }
    if flow.len() != p_t.len() {
        return Err(PerceptionError::SizeMismatch(format!(
            "{} flow vectors for {} points",
            flow.len(),
            p_t.len()
        )));
    }
    let tree = KdTree::build(next);
    let out = exec.map_range(p_t.len(), |i| {
        let q = [0, 1, 2].map(|k| p_t[i][k] + flow[i][k]);
        next[tree.nearest(&q).expect("non-empty tree")]
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn tree_matches_scan_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 7, 100, 1000] {
            let pts = cloud(&mut rng, n);
            let tree = KdTree::build(&pts);
            for _ in 0..200 {
                let q = [rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)];
                assert_eq!(tree.nearest(&q), brute_nearest(&pts, &q));
            }
        }
    }

    #[test]
    fn ties_resolve_to_smaller_index() {
        // lattice with many equidistant neighbours and duplicates
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        pts.extend(pts.clone());
        let tree = KdTree::build(&pts);
        for x in 0..7 {
            for y in 0..7 {
                let q = [x as f64 * 0.5, y as f64 * 0.5, 1.5];
                assert_eq!(tree.nearest(&q), brute_nearest(&pts, &q), "{q:?}");
            }
        }
    }

    #[test]
    fn exact_targets_are_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = cloud(&mut rng, 50);
        let next: Vec<[f64; 3]> = p.iter().map(|q| [q[0] + 0.1, q[1], q[2] - 0.05]).collect();
        let flow = vec![[0.1, 0.0, -0.05]; 50];
        let got = real_correspondence(&p, &flow, &next, Exec::Sequential).unwrap();
        assert_eq!(got, next);
    }

    #[test]
    fn single_target_is_forced() {
        let p = vec![[0.0; 3], [1.0, 2.0, 3.0]];
        let got = real_correspondence(&p, &[[0.0; 3]; 2], &[[5.0, 5.0, 5.0]], Exec::Parallel).unwrap();
        assert_eq!(got, vec![[5.0, 5.0, 5.0]; 2]);
    }

    #[test]
    fn empty_target_is_an_error() {
        assert!(real_correspondence(&[[0.0; 3]], &[[0.0; 3]], &[], Exec::Sequential).is_err());
    }
}
