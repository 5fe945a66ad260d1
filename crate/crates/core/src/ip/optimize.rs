use serde::{Deserialize, Serialize};

use super::{buffer_loss_grad, GroupScales, IpError, ModelParams, Observation, ParamLayout};
use crate::autodiff::Tape;
use crate::scene::TreeStructure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// The learning rate is multiplied by `decay` every `decay_every` steps.
    pub decay_every: usize,
    pub decay: f64,
    pub scales: GroupScales,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            steps: 100,
            lr: 0.05,
            momentum: 0.9,
            decay_every: 100,
            decay: 0.5,
            scales: GroupScales::default(),
            divergence: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub z: ModelParams,
    pub e: TreeStructure,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Step whose parameters were returned (0 = the input).
    pub best_step: usize,
    pub curve: Vec<f64>,
}

/// Momentum gradient descent on the buffer loss. Every step is followed by
/// the projection back onto the constraint set; the best iterate seen is
/// returned, and the tree is re-extracted from its joint matrix.
pub fn optimize_params(
    z: &ModelParams,
    e: &TreeStructure,
    obs: &[Observation],
    cfg: &OptConfig,
) -> Result<OptResult, IpError> {
    if obs.is_empty() {
        return Err(IpError::Invalid("no observations".into()));
    }
    if cfg.steps == 0 {
        return Err(IpError::Invalid("steps must be >= 1".into()));
    }
    z.validate()?;
    let layout = ParamLayout::new(z, e);
    let scales = layout.scales(&cfg.scales);
    let mut x = layout.flatten(z);
    let mut vel = vec![0.0; x.len()];
    let mut tape = Tape::with_capacity(obs.len() * z.m.n * 24);
    let mut best = (f64::INFINITY, 0usize, x.clone());
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let mut initial = f64::NAN;
    for step in 0..=cfg.steps {
        let (loss, g) = buffer_loss_grad(&mut tape, &layout, e, &x, obs)?;
        if step == 0 {
            initial = loss;
        }
        curve.push(loss);
        if !loss.is_finite() || loss > cfg.divergence * initial.max(1e-12) {
            return Err(IpError::Diverged {
                step,
                loss,
                initial,
            });
        }
        if loss < best.0 {
            best = (loss, step, x.clone());
        }
        if step == cfg.steps {
            break;
        }
        let decays = if cfg.decay_every > 0 { step / cfg.decay_every } else { 0 };
        let lr = cfg.lr * cfg.decay.powi(decays as i32);
        if lr == 0.0 {
            continue;
        }
        for i in 0..x.len() {
            vel[i] = cfg.momentum * vel[i] - lr * scales[i] * g[i];
            x[i] += vel[i];
        }
        layout.project(&mut x);
    }
    let (best_loss, best_step, bx) = best;
    let z2 = if best_step == 0 { z.clone() } else { layout.unflatten(&bx, z) };
    let e2 = z2.tree()?;
    Ok(OptResult {
        z: z2,
        e: e2,
        initial_loss: initial,
        best_loss,
        best_step,
        curve,
    })
}

/// Reward: loss drop on one observation from `(z, e)` to `(z2, e2)`.
pub fn ip_reward(
    obs: &Observation,
    z: &ModelParams,
    e: &TreeStructure,
    z2: &ModelParams,
    e2: &TreeStructure,
) -> Result<f64, IpError> {
    Ok(super::modeling_loss(obs, z, e)? - super::modeling_loss(obs, z2, e2)?)
}
