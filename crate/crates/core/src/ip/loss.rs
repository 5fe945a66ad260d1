use serde::{Deserialize, Serialize};

use super::{IpError, ModelParams, ParamLayout};
use crate::autodiff::{Scalar, Tape};
use crate::diffsim::{point_forward, SoftModel, SoftSegmentation};
use crate::par::Exec;
use crate::perception::{estimate_scene_flow, real_correspondence, FlowMode};
use crate::scene::{LinkId, TreeStructure};

/// Move the joint into `link` by `delta` (rad or m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpAction {
    pub link: LinkId,
    pub delta: f64,
}

/// One interaction: the cloud before, the correspondence targets after, the
/// action, and the joint values (per link, root 0) the model held before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub p_t: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
    pub action: IpAction,
    pub q_links: Vec<f64>,
}

impl Observation {
    /// Estimate flow from `p_t` to `p_next` and snap each flowed point to the
    /// next cloud.
    pub fn capture(
        p_t: Vec<[f64; 3]>,
        p_next: &[[f64; 3]],
        action: IpAction,
        q_links: Vec<f64>,
        mode: FlowMode,
        seed: u64,
        exec: Exec,
    ) -> Result<Self, IpError> {
        let flow = estimate_scene_flow(&p_t, p_next, mode, seed)?;
        let target = real_correspondence(&p_t, &flow.flow, p_next, exec)?;
        Ok(Observation {
            p_t,
            target,
            action,
            q_links,
        })
    }
}

fn edge_values<S: Scalar>(like: &S, tree: &TreeStructure, q_links: &[f64]) -> Vec<S> {
    tree.edges.iter().map(|&(_, v)| like.cst(q_links[v - 1])).collect()
}

/// `(1/N) Σ ‖P̃ - P̄‖²` for one observation, with the action displacement
/// passed separately so it can be a tape variable.
pub fn observation_loss<S: Scalar>(
    model: &SoftModel<S>,
    seg: &SoftSegmentation<S>,
    obs: &Observation,
    delta: S,
) -> Result<S, IpError> {
    let n = obs.p_t.len();
    if obs.target.len() != n || seg.n != n {
        return Err(IpError::SizeMismatch(format!(
            "cloud {n}, targets {}, segmentation rows {}",
            obs.target.len(),
            seg.n
        )));
    }
    if obs.q_links.len() != model.k() {
        return Err(IpError::SizeMismatch(format!(
            "{} joint values for {} links",
            obs.q_links.len(),
            model.k()
        )));
    }
    let q = edge_values(&delta, &model.tree, &obs.q_links);
    let pred = point_forward(&obs.p_t, seg, model, &q, obs.action.link, delta)?;
    let terms: Vec<S> = pred
        .iter()
        .zip(&obs.target)
        .map(|(p, t)| {
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            S::dot(&d, &d)
        })
        .collect();
    Ok(S::sum(&terms) / n as f64)
}

/// Modeling loss on plain values.
pub fn modeling_loss(obs: &Observation, z: &ModelParams, e: &TreeStructure) -> Result<f64, IpError> {
    observation_loss(&z.soft_model(e), &z.m, obs, obs.action.delta)
}

/// Loss summed over an observation buffer.
pub fn buffer_loss(obs: &[Observation], z: &ModelParams, e: &TreeStructure) -> Result<f64, IpError> {
    let model = z.soft_model(e);
    obs.iter()
        .map(|o| observation_loss(&model, &z.m, o, o.action.delta))
        .sum()
}

/// Buffer loss and its gradient at flat coordinates `x` (see
/// [`ParamLayout`]). `tape` is cleared and reused.
pub fn buffer_loss_grad(
    tape: &mut Tape,
    layout: &ParamLayout,
    tree: &TreeStructure,
    x: &[f64],
    obs: &[Observation],
) -> Result<(f64, Vec<f64>), IpError> {
    tape.clear();
    let (leaves, model, seg) = layout.lift(tape, x, tree);
    let mut parts = Vec::with_capacity(obs.len());
    for o in obs {
        let d = leaves[0].cst(o.action.delta);
        parts.push(observation_loss(&model, &seg, o, d)?);
    }
    let total = tape.sum(&parts);
    let g = tape.backward(total)?;
    Ok((total.value(), g.wrt_all(&leaves)))
}

/// Derivative of one observation's loss with respect to the action
/// displacement.
pub fn loss_delta_grad(obs: &Observation, z: &ModelParams, e: &TreeStructure) -> Result<(f64, f64), IpError> {
    let tape = Tape::new();
    let layout = ParamLayout::new(z, e);
    let x = layout.flatten(z);
    let (_, model, seg) = layout.lift(&tape, &x, e);
    let d = tape.var(obs.action.delta);
    let l = observation_loss(&model, &seg, obs, d)?;
    let g = tape.backward(l)?;
    Ok((l.value(), g.wrt(d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip::test_support::door_setup;
    use crate::scene::SLOT_REVOLUTE;

    #[test]
    fn perfect_model_and_zero_action_give_zero() {
        let (z, e, p0, _) = door_setup(0.0);
        let obs = Observation::capture(
            p0.clone(),
            &p0,
            IpAction { link: 2, delta: 0.0 },
            vec![0.0; 2],
            FlowMode::Gt,
            0,
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(modeling_loss(&obs, &z, &e).unwrap(), 0.0);
    }

    #[test]
    fn perfect_model_after_opening_is_near_zero() {
        let (z, e, _, obs) = door_setup(30f64.to_radians());
        let l = modeling_loss(&obs, &z, &e).unwrap();
        // hard-but-soft logits leave a tiny slide component
        assert!(l < 1e-12, "{l}");
    }

    #[test]
    fn offset_origin_gives_positive_loss_and_gradient() {
        let (mut z, e, _, obs) = door_setup(30f64.to_radians());
        let i = z.c.index(1, 2);
        z.c.params[i][3] += 0.05;
        let l = modeling_loss(&obs, &z, &e).unwrap();
        assert!(l > 1e-4);
        let lay = ParamLayout::new(&z, &e);
        let x = lay.flatten(&z);
        let (lv, g) = buffer_loss_grad(&mut Tape::new(), &lay, &e, &x, std::slice::from_ref(&obs)).unwrap();
        assert!((lv - l).abs() < 1e-15);
        let go = &g[super::super::params::ORIGIN];
        assert!(go.iter().map(|v| v.abs()).sum::<f64>() > 1e-6);
        // analytic: door points displaced by (R - I) applied to the origin
        // shift, so dL/dorigin_x is 2 · mean over door points of
        // ((R - I) e_x)·((R - I) e_x) · 0.05 with the sign of the shift
        let th = 30f64.to_radians();
        let col = [th.cos() - 1.0, th.sin(), 0.0];
        let door_frac =
            z.m.hard_labels().iter().filter(|&&l| l == 2).count() as f64 / z.m.n as f64;
        let expect = 2.0 * door_frac * (col[0] * col[0] + col[1] * col[1]) * 0.05;
        assert!((go[0] - expect).abs() < 1e-6 * expect.max(1.0), "{} vs {expect}", go[0]);
    }

    #[test]
    fn uniform_target_offset_adds_its_square() {
        let (z, e, _, mut obs) = door_setup(0.4);
        let base = modeling_loss(&obs, &z, &e).unwrap();
        let d = 0.03;
        obs.target.iter_mut().for_each(|t| t[1] += d);
        let shifted = modeling_loss(&obs, &z, &e).unwrap();
        assert!((shifted - base - d * d).abs() < 1e-9, "{shifted} {base}");
    }

    #[test]
    fn delta_gradient_matches_difference() {
        let (mut z, e, _, obs) = door_setup(0.5);
        let i = z.j.index(1, 2);
        z.j.logits[i][SLOT_REVOLUTE] = 1.0;
        let i = z.c.index(1, 2);
        z.c.params[i][4] -= 0.03;
        let (_, g) = loss_delta_grad(&obs, &z, &e).unwrap();
        let h = 1e-6;
        let at = |d: f64| {
            let mut o = obs.clone();
            o.action.delta = d;
            modeling_loss(&o, &z, &e).unwrap()
        };
        let fd = (at(0.5 + h) - at(0.5 - h)) / (2.0 * h);
        assert!((g - fd).abs() < 1e-6 * fd.abs().max(1.0));
    }
}
