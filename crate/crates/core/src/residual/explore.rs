use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ResidualError, Transition};
use crate::diffsim::{robot_step, SimScene, SimState};

/// Smoothed random torques for collecting real transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    pub episode_len: usize,
    /// Peak torque per arm joint (N·m); the last value repeats.
    pub torque: Vec<f64>,
    /// First-order filter on the torque noise, in [0, 1).
    pub smoothing: f64,
    /// Keep the gripper closed.
    pub grasp: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            episode_len: 50,
            torque: vec![1.5, 0.8, 0.3],
            smoothing: 0.8,
            grasp: true,
        }
    }
}

/// Roll random torque episodes from `start` in `real` until `n` transitions
/// are collected. An episode ends early when any joint hits a limit or a
/// grasp is lost.
pub fn explore_transitions(
    real: &SimScene,
    start: &SimState<f64>,
    n: usize,
    cfg: &ExploreConfig,
    seed: u64,
) -> Result<Vec<Transition>, ResidualError> {
    if cfg.episode_len == 0 || cfg.torque.is_empty() || !(0.0..1.0).contains(&cfg.smoothing) {
        return Err(ResidualError::Invalid("explore config out of range".into()));
    }
    let r = real.robot.dof();
    let peak: Vec<f64> = (0..r).map(|i| cfg.torque[i.min(cfg.torque.len() - 1)]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut s = start.clone();
        let mut a: Vec<f64> = peak.iter().map(|&p| rng.gen_range(-p..=p)).collect();
        for _ in 0..cfg.episode_len {
            if out.len() == n {
                break;
            }
            for i in 0..r {
                let kick = rng.gen_range(-peak[i]..=peak[i]);
                a[i] = cfg.smoothing * a[i] + (1.0 - cfg.smoothing) * kick;
            }
            let (next, info) = robot_step(real, &s, &a, cfg.grasp)?;
            out.push(Transition {
                s: s.clone(),
                a: a.clone(),
                grasp: cfg.grasp,
                next: next.clone(),
            });
            let lost = s.attachment.is_some() && next.attachment.is_none();
            if lost || info.robot_saturated.iter().chain(&info.object_saturated).any(|&b| b) {
                break;
            }
            s = next;
        }
    }
    Ok(out)
}
