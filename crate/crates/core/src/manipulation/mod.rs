//! Two-level manipulation: plan the object's motion with virtual joint
//! forces, then find arm torques that reproduce it, then run the result in
//! the "real" world and keep the transitions of failed runs.

mod execute;
mod object;
mod placement;
mod robot;
mod solve;
mod trigger;
mod types;

pub use execute::{guided_execute, ExecOutcome};
pub use object::{object_centric_plan, object_cost_grad, ObjectPlanConfig, ObjectPlanReport};
pub use placement::{home_state, place_arm};
pub use robot::{robot_centric_optimize, robot_cost, robot_cost_grad, reference_path, ReferencePath, RobotConfig, RobotReport};
pub use solve::{two_level_solve, ReplanRecord, SolveConfig, SolveOutcome};
pub use trigger::{check_replan_trigger, TriggerConfig, TriggerReport};
pub use types::{ObjectTrajectory, Policy, RobotTrajectory, Task, FORMAT_VERSION};

use crate::autodiff::AdError;
use crate::diffsim::SimError;
use crate::residual::ResidualError;
use crate::scene::LinkId;

#[derive(Debug, thiserror::Error)]
pub enum ManipError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("handle at {dist:.3} m is beyond the arm's reach of {reach:.3} m")]
    Unreachable { dist: f64, reach: f64 },
    #[error("gripper never closed on link {0}")]
    GraspFailed(LinkId),
    #[error("object plan did not improve on its initial cost {initial}")]
    NoImprovement {
        initial: f64,
        best: Box<ObjectTrajectory>,
    },
    #[error("gave up after {replans} replans")]
    MaxReplans { replans: usize, best: Box<SolveOutcome> },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

/// Heavy-ball gradient step with the gradient rescaled to norm at most
/// `clip`. Returns the norm before clipping.
pub(crate) fn momentum_step(x: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, momentum: f64, clip: f64) -> f64 {
    let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = if n > clip { clip / n } else { 1.0 };
    for i in 0..x.len() {
        v[i] = momentum * v[i] - lr * s * g[i];
        x[i] += v[i];
    }
    n
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::{home_state, place_arm};
    use crate::diffsim::{SimScene, SimState};
    use crate::scene::fixtures;

    /// Door fixture with the arm placed for opening it by up to 1.2 rad.
    pub fn door_sim() -> SimScene {
        let model = fixtures::door_model();
        let arm = place_arm(&model, 2, 1.2).unwrap();
        SimScene::from_model(&model, arm, 0.01).unwrap()
    }

    pub fn door_rest(scene: &SimScene) -> SimState<f64> {
        home_state(scene, 0, &[0.0], [0.0, 0.0]).unwrap()
    }
}
