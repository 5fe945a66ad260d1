use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KdTree, PerceptionError, SceneFlow};
use crate::geom;

/// Noise bound used by the perturbed-flow protocol (m).
pub const DEFAULT_FLOW_SIGMA: f64 = 0.05;

/// How per-point motion between two frames is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum FlowMode {
    /// True displacement of each material point.
    Gt,
    /// True displacement plus a random offset of length uniform in `[0, sigma]`.
    GtNoise { sigma: f64 },
    /// Displacement to the nearest point of the next frame.
    NearestNeighbor,
}

impl FlowMode {
    pub fn name(&self) -> &'static str {
        match self {
            FlowMode::Gt => "gt",
            FlowMode::GtNoise { .. } => "gt+noise",
            FlowMode::NearestNeighbor => "nn",
        }
    }
}

impl FromStr for FlowMode {
    type Err = PerceptionError;

    /// `gt`, `gt+noise` (default sigma), `gt+noise:<sigma>` or `nn`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "gt" => return Ok(FlowMode::Gt),
            "nn" | "nearest-neighbor" => return Ok(FlowMode::NearestNeighbor),
            "gt+noise" => return Ok(FlowMode::GtNoise { sigma: DEFAULT_FLOW_SIGMA }),
            _ => {}
        }
        if let Some(v) = s.strip_prefix("gt+noise:") {
            let sigma: f64 = v
                .parse()
                .map_err(|_| PerceptionError::UnknownFlowMode(s.to_string()))?;
            if sigma >= 0.0 && sigma.is_finite() {
                return Ok(FlowMode::GtNoise { sigma });
            }
        }
        Err(PerceptionError::UnknownFlowMode(s.to_string()))
    }
}

/// Uniformly distributed unit vector.
fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = geom::norm(&v);
        if n > 1e-6 && n <= 1.0 {
            return geom::scale_f(&v, 1.0 / n);
        }
    }
}

/// Scene flow from `p_t` to `p_next`. The two ground-truth modes rely on the
/// clouds being in index correspondence (same material points).
pub fn estimate_scene_flow(
    p_t: &[[f64; 3]],
    p_next: &[[f64; 3]],
    mode: FlowMode,
    seed: u64,
) -> Result<SceneFlow, PerceptionError> {
    if p_t.is_empty() || p_next.is_empty() {
        return Err(PerceptionError::Empty("flow input cloud"));
    }
    let indexed = || {
        if p_t.len() != p_next.len() {
            return Err(PerceptionError::SizeMismatch(format!(
                "index flow needs equal clouds, got {} and {}",
                p_t.len(),
                p_next.len()
            )));
        }
        Ok(p_t.iter().zip(p_next).map(|(a, b)| geom::sub(b, a)).collect::<Vec<_>>())
    };
    let flow = match mode {
        FlowMode::Gt => indexed()?,
        FlowMode::GtNoise { sigma } => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(PerceptionError::OutOfRange(format!("noise sigma {sigma}")));
            }
            let mut f = indexed()?;
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for v in &mut f {
                    let d = random_direction(&mut rng);
                    let m = rng.gen_range(0.0..=sigma);
                    *v = geom::add(v, &geom::scale_f(&d, m));
                }
            }
            f
        }
        FlowMode::NearestNeighbor => {
            let tree = KdTree::build(p_next);
            p_t.iter()
                .map(|p| geom::sub(&p_next[tree.nearest(p).expect("non-empty")], p))
                .collect()
        }
    };
    Ok(SceneFlow { flow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::brute_nearest;

    fn grid(step: f64, off: [f64; 3]) -> Vec<[f64; 3]> {
        let mut v = Vec::new();
        let n = (1.0 / step) as usize;
        for i in 0..n {
            for k in 0..n {
                v.push([i as f64 * step + off[0], k as f64 * step + off[1], off[2]]);
            }
        }
        v
    }

    #[test]
    fn static_scene_has_zero_gt_flow() {
        let p = grid(0.1, [0.0; 3]);
        let f = estimate_scene_flow(&p, &p, FlowMode::Gt, 0).unwrap();
        assert!(f.flow.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn zero_sigma_equals_gt() {
        let p = grid(0.1, [0.0; 3]);
        let q = grid(0.1, [0.02, 0.0, 0.01]);
        let a = estimate_scene_flow(&p, &q, FlowMode::Gt, 0).unwrap();
        let b = estimate_scene_flow(&p, &q, FlowMode::GtNoise { sigma: 0.0 }, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let p = grid(0.1, [0.0; 3]);
        let mode = FlowMode::GtNoise { sigma: 0.05 };
        let a = estimate_scene_flow(&p, &p, mode, 3).unwrap();
        assert!(a.flow.iter().all(|v| geom::norm(v) <= 0.05 + 1e-15));
        assert_eq!(a, estimate_scene_flow(&p, &p, mode, 3).unwrap());
    }

    #[test]
    fn gt_flow_reproduces_next_frame() {
        let p = grid(0.1, [0.0; 3]);
        let q: Vec<[f64; 3]> = p.iter().map(|x| [x[0] * 1.1, x[1] - 0.3, x[0] * x[1]]).collect();
        let f = estimate_scene_flow(&p, &q, FlowMode::Gt, 0).unwrap();
        for ((a, u), b) in p.iter().zip(&f.flow).zip(&q) {
            assert_eq!(geom::add(a, u), *b);
        }
    }

    #[test]
    fn nearest_neighbor_flow_on_rigid_shift() {
        use rand::Rng;
        // a plate pushed 0.1 m along its normal, re-sampled densely
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<[f64; 3]> = (0..400).map(|_| [rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5), 0.0]).collect();
        let q: Vec<[f64; 3]> = (0..4000).map(|_| [rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5), 0.1]).collect();
        let f = estimate_scene_flow(&p, &q, FlowMode::NearestNeighbor, 0).unwrap();
        for (a, u) in p.iter().zip(&f.flow) {
            assert_eq!(q[brute_nearest(&q, a).unwrap()], geom::add(a, u));
        }
        let mut mags: Vec<f64> = f.flow.iter().map(geom::norm).collect();
        mags.sort_by(f64::total_cmp);
        let median = mags[mags.len() / 2];
        assert!((median - 0.1).abs() < 0.02, "{median}");
    }

    #[test]
    fn modes_parse() {
        assert_eq!("gt".parse::<FlowMode>().unwrap(), FlowMode::Gt);
        assert_eq!("nn".parse::<FlowMode>().unwrap(), FlowMode::NearestNeighbor);
        assert_eq!(
            "gt+noise:0.02".parse::<FlowMode>().unwrap(),
            FlowMode::GtNoise { sigma: 0.02 }
        );
        assert!("optical".parse::<FlowMode>().is_err());
    }
}
