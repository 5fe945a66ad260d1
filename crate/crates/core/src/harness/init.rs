use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diffsim::SoftSegmentation;
use crate::geom;
use crate::ip::ModelParams;
use crate::perception::{
    corrupt_segmentation, group_points, init_joint_estimates, sample_material, FitThresholds, MaterialPoints,
};
use crate::scene::{greedy_tree, ArticulatedModel, JointSpatialMatrix, JointTypeMatrix, PhysicalAttrs, TreeStructure};

/// How far the starting model is from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitError {
    /// Tilt of every joint axis, drawn uniformly from this range (deg).
    pub axis_deg: [f64; 2],
    /// Shift of every joint origin perpendicular to its axis (cm).
    pub origin_cm: [f64; 2],
    /// Share of segmentation labels flipped.
    pub flip_rate: f64,
    /// Logit of the true joint type; None gets its negative, the rest 0.
    pub type_confidence: f64,
}

impl Default for InitError {
    fn default() -> Self {
        InitError {
            axis_deg: [10.0, 20.0],
            origin_cm: [10.0, 20.0],
            flip_rate: 0.05,
            type_confidence: 8.0,
        }
    }
}

impl InitError {
    pub fn none() -> Self {
        InitError {
            axis_deg: [0.0, 0.0],
            origin_cm: [0.0, 0.0],
            flip_rate: 0.0,
            type_confidence: 30.0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if !ordered(self.axis_deg) || self.axis_deg[1] > 90.0 {
            return Err(HarnessError::Config(format!("axis error range {:?}", self.axis_deg)));
        }
        if !ordered(self.origin_cm) {
            return Err(HarnessError::Config(format!("origin error range {:?}", self.origin_cm)));
        }
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(HarnessError::Config(format!("flip rate {} not in [0, 0.5)", self.flip_rate)));
        }
        if !(self.type_confidence.is_finite() && self.type_confidence >= 0.0) {
            return Err(HarnessError::Config("type confidence must be >= 0".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Uniform unit vector perpendicular to unit `a`.
fn perpendicular(a: &[f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let seed = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = geom::normalize(&geom::cross(a, &seed));
    let w = geom::cross(a, &u);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    geom::add(&geom::scale_f(&u, phi.cos()), &geom::scale_f(&w, phi.sin()))
}

/// Starting model `Z₀` for a ground-truth scene: the true joints with
/// perturbed axes and origins, softened type logits and a corrupted
/// segmentation of `n_points` material points.
pub fn initial_params(
    model: &ArticulatedModel,
    mat: &MaterialPoints,
    err: &InitError,
    seed: u64,
) -> Result<(ModelParams, TreeStructure), HarnessError> {
    err.validate()?;
    let k = model.num_links();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut j = JointTypeMatrix::zeros(k);
    for u in 1..=k {
        for v in 1..=k {
            if u != v {
                *j.get_mut(u, v) = [err.type_confidence, 0.0, 0.0, 0.0];
            }
        }
    }
    let mut c = JointSpatialMatrix::new(k);
    let q0 = vec![0.0; model.joints.len()];
    for jt in &model.joints {
        let mut logits = [-err.type_confidence, 0.0, 0.0, 0.0];
        logits[jt.kind.slot()] = err.type_confidence;
        *j.get_mut(jt.parent, jt.child) = logits;
        let (o, a) = model
            .joint_axis_world(jt.child, &q0)
            .ok_or(HarnessError::Degenerate(format!("joint into {}", jt.child)))?;
        let tilt = draw(&mut rng, err.axis_deg).to_radians();
        let about = perpendicular(&a, &mut rng);
        let axis = geom::normalize(&geom::mat_vec(&geom::rotation(&about, tilt), &a));
        let shift = draw(&mut rng, err.origin_cm) / 100.0;
        let dir = perpendicular(&axis, &mut rng);
        c.set(jt.parent, jt.child, axis, geom::add(&o, &geom::scale_f(&dir, shift)), [0.0; 3]);
    }
    let labels = corrupt_segmentation(&rest_points(mat, model)?, &mat.links, k, err.flip_rate, rng.gen())
        .map_err(|e| HarnessError::Degenerate(e.to_string()))?;
    let z = ModelParams {
        j,
        c,
        m: SoftSegmentation::from_labels(&labels, k),
        alpha: vec![PhysicalAttrs::default(); k],
    };
    let e = z.tree().map_err(|e| HarnessError::Degenerate(e.to_string()))?;
    Ok((z, e))
}

/// Starting model from perception alone: a corrupted segmentation, then
/// pairwise joint fits between the rest pose and a probe pose in which every
/// movable joint is moved by `probe` of its range.
pub fn perceive_params(
    model: &ArticulatedModel,
    n_points: usize,
    flip_rate: f64,
    probe: f64,
    seed: u64,
) -> Result<(ModelParams, TreeStructure), HarnessError> {
    let k = model.num_links();
    let perr = |e: crate::perception::PerceptionError| HarnessError::Degenerate(e.to_string());
    let mat = sample_material(model, n_points, seed).map_err(perr)?;
    let q0 = vec![0.0; model.joints.len()];
    let q1: Vec<f64> = model
        .joints
        .iter()
        .map(|j| j.clamp(j.limits[0] + probe * (j.limits[1] - j.limits[0])))
        .collect();
    let p0 = mat.pose(model, &q0).map_err(perr)?;
    let p1 = mat.pose(model, &q1).map_err(perr)?;
    let labels = corrupt_segmentation(&p0, &mat.links, k, flip_rate, seed ^ 0x5eed).map_err(perr)?;
    let before = group_points(&p0, &labels, k);
    let after = group_points(&p1, &labels, k);
    let (j, c) = init_joint_estimates(&before, &after, &FitThresholds::default()).map_err(perr)?;
    let e = greedy_tree(&j)?;
    let z = ModelParams {
        j,
        c,
        m: SoftSegmentation::from_labels(&labels, k),
        alpha: vec![PhysicalAttrs::default(); k],
    };
    Ok((z, e))
}

fn rest_points(mat: &MaterialPoints, model: &ArticulatedModel) -> Result<Vec<[f64; 3]>, HarnessError> {
    mat.pose(model, &vec![0.0; model.joints.len()])
        .map_err(|e| HarnessError::Degenerate(e.to_string()))
}
