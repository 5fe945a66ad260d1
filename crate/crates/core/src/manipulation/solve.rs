use serde::{Deserialize, Serialize};

use super::{
    check_replan_trigger, object_centric_plan, robot_centric_optimize, ManipError, ObjectPlanConfig, ObjectTrajectory,
    Policy, RobotConfig, RobotTrajectory, Task, TriggerConfig,
};
use crate::diffsim::{SimScene, SimState};
use crate::residual::Stepper;
use crate::scene::ArticulatedModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub object: ObjectPlanConfig,
    pub robot: RobotConfig,
    pub trigger: TriggerConfig,
    pub max_replans: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            object: ObjectPlanConfig::default(),
            robot: RobotConfig::default(),
            trigger: TriggerConfig::default(),
            max_replans: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    /// Robot step at which the rollout was cut.
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    /// Covers the whole run, replanned segments included.
    pub policy: Policy,
    pub robot: RobotTrajectory,
    /// The last object plan; it starts at robot step `plan_start`.
    pub object: ObjectTrajectory,
    pub plan_start: usize,
    pub replans: Vec<ReplanRecord>,
}

impl SolveOutcome {
    /// Largest object-joint error between the robot rollout and the last
    /// object plan over the steps they share.
    pub fn tracking_error(&self) -> f64 {
        let j = self.object.joint;
        self.object
            .x
            .iter()
            .enumerate()
            .filter_map(|(k, x)| self.robot.s.get(self.plan_start + k).map(|s| (s.object.q[j] - x.q[j]).abs()))
            .fold(0.0, f64::max)
    }
}

fn join(prefix: Option<(Policy, RobotTrajectory)>, policy: Policy, traj: RobotTrajectory) -> (Policy, RobotTrajectory, usize) {
    match prefix {
        None => (policy, traj, 0),
        Some((mut p, mut t)) => {
            let offset = t.horizon();
            p.concat(policy);
            t.s.pop();
            t.s.extend(traj.s);
            t.a.extend(traj.a);
            t.grasp.extend(traj.grasp);
            t.cost += traj.cost;
            (p, t, offset)
        }
    }
}

/// Plan the object's motion, then the arm's, and start over from the
/// current state whenever the arm's rollout trips a replan trigger. After a
/// trigger, inverse kinematics keeps twice the joint margin clear.
pub fn two_level_solve(
    scene: &SimScene,
    model: &ArticulatedModel,
    task: &Task,
    s_init: &SimState<f64>,
    stepper: &Stepper,
    cfg: &SolveConfig,
) -> Result<SolveOutcome, ManipError> {
    task.joint_in(scene)?;
    if model.joints.len() != scene.joints.len() {
        return Err(ManipError::Invalid("model and scene disagree on the joints".into()));
    }
    let mut s = s_init.clone();
    let mut remaining = task.horizon;
    let mut prefix: Option<(Policy, RobotTrajectory)> = None;
    let mut replans = Vec::new();
    loop {
        let sub = Task {
            horizon: remaining.max(1),
            ..*task
        };
        let (plan, _) = object_centric_plan(scene, &sub, &s.object, &cfg.object)?;
        let margin = if replans.is_empty() { 0.0 } else { 2.0 * cfg.trigger.joint_margin };
        let (policy, traj, report) = robot_centric_optimize(scene, &sub, &plan, &s, stepper, &cfg.robot, margin)?;
        let mut hit = None;
        for t in 1..=traj.horizon() {
            let r = check_replan_trigger(&traj.s[t], scene, model, task.link, &cfg.trigger)?;
            if r.fired() {
                hit = Some((t, r));
                break;
            }
        }
        let Some((t, why)) = hit else {
            let base = prefix.as_ref().map_or(0, |p| p.1.horizon());
            let (policy, robot, _) = join(prefix, policy, traj);
            return Ok(SolveOutcome {
                policy,
                robot,
                object: plan,
                plan_start: base + report.lead_in,
                replans,
            });
        };
        let base = prefix.as_ref().map_or(0, |p| p.1.horizon());
        if replans.len() == cfg.max_replans {
            let (policy, robot, _) = join(prefix, policy, traj);
            return Err(ManipError::MaxReplans {
                replans: replans.len(),
                best: Box::new(SolveOutcome {
                    policy,
                    robot,
                    object: plan,
                    plan_start: base + report.lead_in,
                    replans,
                }),
            });
        }
        replans.push(ReplanRecord {
            step: base + t,
            reason: why.reason(),
        });
        let (mut p, mut tr) = (policy, traj);
        p.truncate(t);
        tr.truncate(t);
        s = tr.terminal().clone();
        remaining = remaining.saturating_sub(t.saturating_sub(report.lead_in));
        let (p, tr, _) = join(prefix, p, tr);
        prefix = Some((p, tr));
    }
}
