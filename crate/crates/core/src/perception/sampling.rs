use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GroundTruthScene, PerceptionError, PointCloud};
use crate::scene::{ArticulatedModel, BoxPrimitive, LinkId};

/// Surface samples in link frames. The same seed always yields the same
/// material points, so clouds of one scene at different joint values are in
/// index correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialPoints {
    pub links: Vec<LinkId>,
    pub local: Vec<[f64; 3]>,
}

impl MaterialPoints {
    pub fn pose(&self, model: &ArticulatedModel, q: &[f64]) -> Result<Vec<[f64; 3]>, PerceptionError> {
        let frames = model.link_frames(q)?;
        Ok(self
            .local
            .iter()
            .zip(&self.links)
            .map(|(p, &l)| frames[l - 1].apply(p))
            .collect())
    }
}

/// Minimum share of the budget every link gets, so thin parts still show up.
const MIN_PER_LINK: usize = 4;

fn box_face_sample(b: &BoxPrimitive, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let [sx, sy, sz] = b.size;
    let faces = [sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy];
    let face = match WeightedIndex::new(faces) {
        Ok(w) => w.sample(rng),
        Err(_) => rng.gen_range(0..6),
    };
    let mut p = [0.0; 3];
    for (i, v) in p.iter_mut().enumerate() {
        *v = (rng.gen::<f64>() - 0.5) * b.size[i];
    }
    let ax = face / 2;
    p[ax] = if face % 2 == 0 { -0.5 } else { 0.5 } * b.size[ax];
    [0, 1, 2].map(|i| b.center[i] + p[i])
}

fn link_area(model: &ArticulatedModel, l: LinkId) -> f64 {
    let link = model.link(l).expect("validated ids");
    if link.boxes.is_empty() {
        // no primitives: weigh by point count instead
        link.points.len() as f64 * 1e-4
    } else {
        link.boxes.iter().map(|b| b.area()).sum()
    }
}

/// Split `n` samples over the links: a floor per link, the rest by surface
/// area with largest-remainder rounding.
fn allocate(model: &ArticulatedModel, n: usize) -> Vec<usize> {
    let k = model.num_links();
    let floor = MIN_PER_LINK.min(n / k);
    let areas: Vec<f64> = (1..=k).map(|l| link_area(model, l)).collect();
    let total: f64 = areas.iter().sum();
    let rest = n - floor * k;
    let exact: Vec<f64> = areas.iter().map(|a| a / total * rest as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = rest - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + floor).collect()
}

pub fn sample_material(model: &ArticulatedModel, n: usize, seed: u64) -> Result<MaterialPoints, PerceptionError> {
    let k = model.num_links();
    if n < 8 * k {
        return Err(PerceptionError::TooFewPoints { need: 8 * k, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = allocate(model, n);
    let mut links = Vec::with_capacity(n);
    let mut local = Vec::with_capacity(n);
    for (li, &c) in counts.iter().enumerate() {
        let link = &model.links.iter().find(|l| l.id == li + 1).expect("validated ids");
        let areas: Vec<f64> = link.boxes.iter().map(|b| b.area()).collect();
        let pick = WeightedIndex::new(&areas).ok();
        for _ in 0..c {
            let p = match &pick {
                Some(w) => box_face_sample(&link.boxes[w.sample(&mut rng)], &mut rng),
                None if !link.points.is_empty() => link.points[rng.gen_range(0..link.points.len())],
                None => return Err(PerceptionError::Degenerate(format!("link {} has no surface", li + 1))),
            };
            links.push(li + 1);
            local.push(p);
        }
    }
    Ok(MaterialPoints { links, local })
}

/// Uniform-area surface sample of the scene at its current joint values,
/// with ground-truth labels.
pub fn sample_point_cloud(scene: &GroundTruthScene, n: usize, seed: u64) -> Result<PointCloud, PerceptionError> {
    let mat = sample_material(&scene.model, n, seed)?;
    let points = mat.pose(&scene.model, &scene.q)?;
    PointCloud::new(points, 0, Some(mat.links))
}
