use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KdTree, PerceptionError};
use crate::scene::LinkId;

/// Distance from each point to the nearest point carrying another label
/// (infinite when there is only one label).
pub fn boundary_distances(points: &[[f64; 3]], labels: &[LinkId]) -> Vec<f64> {
    let mut parts: Vec<LinkId> = labels.to_vec();
    parts.sort_unstable();
    parts.dedup();
    let mut out = vec![f64::INFINITY; points.len()];
    for &part in &parts {
        let (other_idx, others): (Vec<usize>, Vec<[f64; 3]>) = points
            .iter()
            .zip(labels)
            .enumerate()
            .filter(|(_, (_, &l))| l != part)
            .map(|(i, (p, _))| (i, *p))
            .unzip();
        if others.is_empty() {
            continue;
        }
        let tree = KdTree::build(&others);
        for (i, p) in points.iter().enumerate() {
            if labels[i] == part {
                let j = tree.nearest(p).expect("non-empty");
                let q = points[other_idx[j]];
                out[i] = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            }
        }
    }
    out
}

/// Flip `round(rate · N)` labels to a uniformly chosen other part. Points in
/// the closest decile to another part go first (in seeded random order),
/// then the rest.
pub fn corrupt_segmentation(
    points: &[[f64; 3]],
    labels: &[LinkId],
    k: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<LinkId>, PerceptionError> {
    if !(0.0..0.5).contains(&rate) {
        return Err(PerceptionError::OutOfRange(format!("flip rate {rate} not in [0, 0.5)")));
    }
    if points.len() != labels.len() {
        return Err(PerceptionError::SizeMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l == 0 || l > k) {
        return Err(PerceptionError::OutOfRange(format!("label {l} outside 1..={k}")));
    }
    let mut out = labels.to_vec();
    if k < 2 || rate == 0.0 {
        return Ok(out);
    }
    let n = points.len();
    let m = (rate * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = boundary_distances(points, labels);
    let mut by_dist: Vec<usize> = (0..n).collect();
    by_dist.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let decile = n.div_ceil(10);
    let (near, far) = by_dist.split_at_mut(decile.min(n));
    near.shuffle(&mut rng);
    far.shuffle(&mut rng);
    for &i in by_dist.iter().take(m) {
        let r = rng.gen_range(1..k);
        // uniform over the k - 1 labels different from the current one
        out[i] = if r >= labels[i] { r + 1 } else { r };
    }
    Ok(out)
}
