use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ManipError;
use crate::diffsim::{object_dynamics_step, JointDynamics, ObjectState, SimScene, SimState};
use crate::residual::StepperKind;
use crate::scene::LinkId;

/// Version stamped into every serialized trajectory and policy.
pub const FORMAT_VERSION: u32 = 1;

/// Move joint of `link` to `q_goal` within `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub link: LinkId,
    pub q_goal: f64,
    pub horizon: usize,
    pub tolerance: f64,
}

impl Task {
    /// Index of the task joint in `scene`, after checking the goal against
    /// its limits.
    pub fn joint_in(&self, scene: &SimScene) -> Result<usize, ManipError> {
        let j = scene
            .joint_of(self.link)
            .ok_or(ManipError::Invalid(format!("link {} has no joint", self.link)))?;
        let jt = &scene.joints[j];
        if !jt.kind.is_movable() {
            return Err(ManipError::Invalid(format!("joint of link {} is fixed", self.link)));
        }
        let lim = jt.dynamics.limits;
        if !(self.q_goal >= lim[0] && self.q_goal <= lim[1]) {
            return Err(ManipError::Invalid(format!(
                "goal {} outside limits [{}, {}]",
                self.q_goal, lim[0], lim[1]
            )));
        }
        if self.horizon == 0 {
            return Err(ManipError::Invalid("horizon must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(ManipError::Invalid(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(j)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    data: T,
}

fn to_json<T: Serialize>(kind: &str, data: &T) -> String {
    serde_json::to_string(&Envelope {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        data,
    })
    .expect("plain data serializes")
}

fn from_json<T: DeserializeOwned>(kind: &str, s: &str) -> Result<T, ManipError> {
    let e: Envelope<T> = serde_json::from_str(s).map_err(|e| ManipError::Format(e.to_string()))?;
    if e.kind != kind {
        return Err(ManipError::Format(format!("expected a {kind}, found a {}", e.kind)));
    }
    if e.version != FORMAT_VERSION {
        return Err(ManipError::Format(format!("unsupported version {}", e.version)));
    }
    Ok(e.data)
}

/// Object states `x[0..=T]` and the joint forces `u[0..T]` between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrajectory {
    /// Joint the forces act on.
    pub joint: usize,
    pub x: Vec<ObjectState<f64>>,
    pub u: Vec<Vec<f64>>,
    pub cost: f64,
}

impl ObjectTrajectory {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn terminal(&self) -> &ObjectState<f64> {
        self.x.last().expect("trajectory has an initial state")
    }

    /// Largest deviation between the stored states and a fresh rollout of
    /// the stored forces.
    pub fn consistency_error(&self, joints: &[JointDynamics], dt: f64) -> Result<f64, ManipError> {
        let mut x = self.x[0].clone();
        let mut worst: f64 = 0.0;
        for (t, u) in self.u.iter().enumerate() {
            x = object_dynamics_step(&x, u, joints, dt)?;
            for (a, b) in x.q.iter().chain(&x.qd).zip(self.x[t + 1].q.iter().chain(&self.x[t + 1].qd)) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> String {
        to_json("object-trajectory", self)
    }

    pub fn from_json(s: &str) -> Result<Self, ManipError> {
        let t: Self = from_json("object-trajectory", s)?;
        if t.x.len() != t.u.len() + 1 {
            return Err(ManipError::Format(format!("{} states for {} controls", t.x.len(), t.u.len())));
        }
        Ok(t)
    }
}

/// Time-varying affine policy `a_t = K_t s_t + k_t` plus a gripper command
/// per step. `gains[t]` is row-major, `action_dim × state_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub state_dim: usize,
    pub action_dim: usize,
    pub gains: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub grasp: Vec<bool>,
}

impl Policy {
    /// Open-loop policy: zero gains.
    pub fn feedforward(state_dim: usize, offsets: Vec<Vec<f64>>, grasp: Vec<bool>) -> Self {
        let action_dim = offsets.first().map_or(0, |k| k.len());
        Policy {
            state_dim,
            action_dim,
            gains: vec![vec![0.0; action_dim * state_dim]; offsets.len()],
            offsets,
            grasp,
        }
    }

    pub fn horizon(&self) -> usize {
        self.offsets.len()
    }

    pub fn validate(&self) -> Result<(), ManipError> {
        let h = self.offsets.len();
        if self.gains.len() != h || self.grasp.len() != h {
            return Err(ManipError::Invalid(format!(
                "{} gains, {} offsets, {} grasp flags",
                self.gains.len(),
                h,
                self.grasp.len()
            )));
        }
        for (k, g) in self.offsets.iter().zip(&self.gains) {
            if k.len() != self.action_dim || g.len() != self.action_dim * self.state_dim {
                return Err(ManipError::Invalid("policy step has the wrong shape".into()));
            }
            if k.iter().chain(g).any(|v| !v.is_finite()) {
                return Err(ManipError::Invalid("policy is not finite".into()));
            }
        }
        Ok(())
    }

    pub fn action(&self, t: usize, s: &[f64]) -> Vec<f64> {
        let g = &self.gains[t];
        (0..self.action_dim)
            .map(|i| {
                let row = &g[i * self.state_dim..(i + 1) * self.state_dim];
                self.offsets[t][i] + row.iter().zip(s).map(|(k, x)| k * x).sum::<f64>()
            })
            .collect()
    }

    /// Append `other`, which continues where this one stops.
    pub fn concat(&mut self, other: Policy) {
        self.gains.extend(other.gains);
        self.offsets.extend(other.offsets);
        self.grasp.extend(other.grasp);
    }

    pub fn truncate(&mut self, steps: usize) {
        self.gains.truncate(steps);
        self.offsets.truncate(steps);
        self.grasp.truncate(steps);
    }

    pub fn to_json(&self) -> String {
        to_json("policy", self)
    }

    pub fn from_json(s: &str) -> Result<Self, ManipError> {
        let p: Self = from_json("policy", s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Simulated states `s[0..=H]`, actions `a[0..H]` and gripper commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotTrajectory {
    pub s: Vec<SimState<f64>>,
    pub a: Vec<Vec<f64>>,
    pub grasp: Vec<bool>,
    pub stepper: StepperKind,
    pub cost: f64,
}

impl RobotTrajectory {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn terminal(&self) -> &SimState<f64> {
        self.s.last().expect("trajectory has an initial state")
    }

    pub fn truncate(&mut self, steps: usize) {
        self.s.truncate(steps + 1);
        self.a.truncate(steps);
        self.grasp.truncate(steps);
    }

    pub fn to_json(&self) -> String {
        to_json("robot-trajectory", self)
    }

    pub fn from_json(s: &str) -> Result<Self, ManipError> {
        let t: Self = from_json("robot-trajectory", s)?;
        if t.s.len() != t.a.len() + 1 || t.grasp.len() != t.a.len() {
            return Err(ManipError::Format("trajectory lengths disagree".into()));
        }
        Ok(t)
    }
}
