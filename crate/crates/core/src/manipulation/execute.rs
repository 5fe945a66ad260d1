use serde::{Deserialize, Serialize};

use super::{ManipError, Policy, Task};
use crate::diffsim::{robot_step, SimScene, SimState};
use crate::residual::{Transition, TransitionBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub success: bool,
    /// |q − q_goal| of the task joint at the end.
    pub final_error: f64,
    pub transitions: Vec<Transition>,
    /// Set if the world refused a step; the run counts as failed.
    pub aborted: Option<String>,
    /// Transitions added to the buffer.
    pub recorded: usize,
}

/// Run `policy` closed-loop in `real` from `s_init`. Failed runs add every
/// transition to `buffer`.
pub fn guided_execute(
    policy: &Policy,
    real: &SimScene,
    s_init: &SimState<f64>,
    task: &Task,
    buffer: &mut TransitionBuffer,
) -> Result<ExecOutcome, ManipError> {
    policy.validate()?;
    let j = task.joint_in(real)?;
    if policy.state_dim != real.state_dim() || policy.action_dim != real.action_dim() {
        return Err(ManipError::Invalid(format!(
            "policy maps {} states to {} actions, world has {} and {}",
            policy.state_dim,
            policy.action_dim,
            real.state_dim(),
            real.action_dim()
        )));
    }
    if policy.horizon() < task.horizon {
        return Err(ManipError::Invalid(format!(
            "policy covers {} steps, task needs {}",
            policy.horizon(),
            task.horizon
        )));
    }
    let mut s = s_init.clone();
    let mut transitions = Vec::with_capacity(policy.horizon());
    let mut aborted = None;
    for t in 0..policy.horizon() {
        let a = policy.action(t, &s.to_vec());
        match robot_step(real, &s, &a, policy.grasp[t]) {
            Ok((next, _)) => {
                transitions.push(Transition {
                    s: std::mem::replace(&mut s, next.clone()),
                    a,
                    grasp: policy.grasp[t],
                    next,
                });
            }
            Err(e) => {
                aborted = Some(format!("step {t}: {e}"));
                break;
            }
        }
    }
    let final_error = (s.object.q[j] - task.q_goal).abs();
    let success = aborted.is_none() && final_error <= task.tolerance;
    let mut recorded = 0;
    if !success {
        buffer.extend(transitions.iter().cloned())?;
        recorded = transitions.len();
    }
    Ok(ExecOutcome {
        success,
        final_error,
        transitions,
        aborted,
        recorded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffsim::Perturbation;
    use crate::manipulation::test_support::{door_rest, door_sim};
    use crate::manipulation::{two_level_solve, SolveConfig};
    use crate::residual::{train_residual, NetConfig, ResidualNet, Stepper, TrainConfig};
    use crate::scene::fixtures;

    fn task() -> Task {
        Task {
            link: 2,
            q_goal: 1.0,
            horizon: 100,
            tolerance: 2f64.to_radians(),
        }
    }

    #[test]
    fn matched_world_reproduces_the_plan() {
        let scene = door_sim();
        let s0 = door_rest(&scene);
        let sol = two_level_solve(&scene, &fixtures::door_model(), &task(), &s0, &Stepper::Nominal, &SolveConfig::default())
            .unwrap();
        let mut buf = TransitionBuffer::new(1000);
        let out = guided_execute(&sol.policy, &scene, &s0, &task(), &mut buf).unwrap();
        let planned = (sol.robot.terminal().object.q[0] - 1.0).abs();
        assert!((out.final_error - planned).abs() < 1e-12);
        assert_eq!(out.success, planned <= task().tolerance);
        assert!(out.success);
        assert!(buf.is_empty());
        for (tr, s) in out.transitions.iter().zip(&sol.robot.s[1..]) {
            assert_eq!(&tr.next, s);
        }
    }

    #[test]
    fn heavier_door_fails_then_learned_correction_succeeds() {
        let scene = door_sim();
        let model = fixtures::door_model();
        let real = scene.perturbed(&Perturbation::default());
        let s0 = door_rest(&scene);
        let cfg = SolveConfig::default();
        let sol = two_level_solve(&scene, &model, &task(), &s0, &Stepper::Nominal, &cfg).unwrap();
        let mut buf = TransitionBuffer::new(1000);
        let out = guided_execute(&sol.policy, &real, &s0, &task(), &mut buf).unwrap();
        assert!(!out.success);
        assert_eq!(out.recorded, sol.policy.horizon());
        assert_eq!(buf.len(), sol.policy.horizon());

        let net = ResidualNet::new(scene.state_dim(), 3, 1, &NetConfig::default(), 0).unwrap();
        let (net, _) = train_residual(&net, &scene, &buf.to_vec(), &TrainConfig::default()).unwrap();
        let sol2 = two_level_solve(&scene, &model, &task(), &s0, &Stepper::Augmented(&net), &cfg).unwrap();
        let out2 = guided_execute(&sol2.policy, &real, &s0, &task(), &mut buf).unwrap();
        assert!(out2.final_error < out.final_error);
        assert!(out2.success, "{}", out2.final_error);
        assert_eq!(buf.len(), sol.policy.horizon());
    }

    #[test]
    fn mismatched_policy_is_an_error() {
        let scene = door_sim();
        let s0 = door_rest(&scene);
        let p = Policy::feedforward(3, vec![vec![0.0; 3]; 100], vec![false; 100]);
        let mut buf = TransitionBuffer::new(10);
        assert!(guided_execute(&p, &scene, &s0, &task(), &mut buf).is_err());
        let p = Policy::feedforward(scene.state_dim(), vec![vec![0.0; 3]; 10], vec![false; 10]);
        assert!(guided_execute(&p, &scene, &s0, &task(), &mut buf).is_err());
    }
}
