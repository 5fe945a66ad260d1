use serde::{Deserialize, Serialize};

use super::{ResidualError, ResidualNet};
use crate::autodiff::{Scalar, Tape};
use crate::diffsim::{robot_step, SimScene, SimState, StepInfo};

/// Nominal one-step model: the differentiable stepper itself.
pub fn nominal_step<S: Scalar>(
    scene: &SimScene,
    s: &SimState<S>,
    a: &[S],
    grasp: bool,
) -> Result<(SimState<S>, StepInfo), ResidualError> {
    Ok(robot_step(scene, s, a, grasp)?)
}

/// Net input: state, grasp flag, action, nominal next state.
pub fn residual_input<S: Scalar>(s: &SimState<S>, grasp: bool, a: &[S], nominal: &SimState<S>) -> Vec<S> {
    let sv = s.to_vec();
    let engaged = s.attachment.is_some() && grasp;
    let mut x = Vec::with_capacity(2 * sv.len() + a.len() + 1);
    x.extend_from_slice(&sv);
    x.push(a[0].cst(if engaged { 1.0 } else { 0.0 }));
    x.extend_from_slice(a);
    x.extend(nominal.to_vec());
    x
}

fn check_dims(scene: &SimScene, net: &ResidualNet) -> Result<(), ResidualError> {
    if net.state_dim != scene.state_dim() || net.action_dim != scene.action_dim() || net.n_obj != scene.joints.len() {
        return Err(ResidualError::SizeMismatch(format!(
            "net for state {} / action {} / {} joints on a scene with {} / {} / {}",
            net.state_dim,
            net.action_dim,
            net.n_obj,
            scene.state_dim(),
            scene.action_dim(),
            scene.joints.len()
        )));
    }
    Ok(())
}

/// Nominal step plus the learned residual on the full state vector.
pub fn augmented_step<S: Scalar>(
    scene: &SimScene,
    net: &ResidualNet,
    s: &SimState<S>,
    a: &[S],
    grasp: bool,
) -> Result<(SimState<S>, StepInfo), ResidualError> {
    check_dims(scene, net)?;
    let (nom, info) = nominal_step(scene, s, a, grasp)?;
    let delta = net.forward(&residual_input(s, grasp, a, &nom));
    if let Some(i) = delta.iter().position(|d| !d.value().is_finite()) {
        return Err(ResidualError::NonFinite(format!("residual component {i}")));
    }
    let v: Vec<S> = nom.to_vec().iter().zip(&delta).map(|(&x, &d)| x + d).collect();
    let next = SimState::from_vec(&v, scene.joints.len(), nom.attachment)?;
    Ok((next, info))
}

/// Either stepper, chosen at run time.
#[derive(Debug, Clone, Copy)]
pub enum Stepper<'n> {
    Nominal,
    Augmented(&'n ResidualNet),
}

impl Stepper<'_> {
    pub fn step<S: Scalar>(
        &self,
        scene: &SimScene,
        s: &SimState<S>,
        a: &[S],
        grasp: bool,
    ) -> Result<(SimState<S>, StepInfo), ResidualError> {
        match self {
            Stepper::Nominal => nominal_step(scene, s, a, grasp),
            Stepper::Augmented(net) => augmented_step(scene, net, s, a, grasp),
        }
    }

    pub fn kind(&self) -> StepperKind {
        match self {
            Stepper::Nominal => StepperKind::Nominal,
            Stepper::Augmented(_) => StepperKind::Augmented,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepperKind {
    Nominal,
    Augmented,
}

/// One-step Jacobians of the augmented model with their nominal parts.
/// Rows index the next state, columns the current state or the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugJacobians {
    pub ds: Vec<Vec<f64>>,
    pub da: Vec<Vec<f64>>,
    pub nominal_ds: Vec<Vec<f64>>,
    pub nominal_da: Vec<Vec<f64>>,
}

impl AugJacobians {
    /// Residual contribution to ∂s'/∂s, including the path through the
    /// nominal next state.
    pub fn residual_ds(&self) -> Vec<Vec<f64>> {
        sub(&self.ds, &self.nominal_ds)
    }

    pub fn residual_da(&self) -> Vec<Vec<f64>> {
        sub(&self.da, &self.nominal_da)
    }
}

fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(r, q)| r.iter().zip(q).map(|(x, y)| x - y).collect())
        .collect()
}

/// Reverse-mode Jacobians of [`augmented_step`], one backward sweep per
/// output row.
pub fn augmented_jacobians(
    scene: &SimScene,
    net: &ResidualNet,
    s: &SimState<f64>,
    a: &[f64],
    grasp: bool,
) -> Result<AugJacobians, ResidualError> {
    check_dims(scene, net)?;
    let tape = Tape::new();
    let sv = s.lift(&tape);
    let av = tape.vars(a);
    let leaves_s = sv.to_vec();
    let (nom, _) = nominal_step(scene, &sv, &av, grasp)?;
    let delta = net.forward(&residual_input(&sv, grasp, &av, &nom));
    let nom_v = nom.to_vec();
    tape.status()?;
    let mut out = AugJacobians {
        ds: Vec::new(),
        da: Vec::new(),
        nominal_ds: Vec::new(),
        nominal_da: Vec::new(),
    };
    for (i, &y) in nom_v.iter().enumerate() {
        let g = tape.backward(y)?;
        out.nominal_ds.push(g.wrt_all(&leaves_s));
        out.nominal_da.push(g.wrt_all(&av));
        let g = tape.backward(y + delta[i])?;
        out.ds.push(g.wrt_all(&leaves_s));
        out.da.push(g.wrt_all(&av));
    }
    Ok(out)
}
