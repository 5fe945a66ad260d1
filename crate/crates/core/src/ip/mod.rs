//! Interactive perception: the point-level modeling loss, gradient refinement
//! of the model parameters over an observation buffer, the loss-drop reward
//! and action selection.

mod episode;
mod loss;
mod optimize;
mod params;
mod policy;

pub use episode::{episode_metrics, run_ip_episode, EpisodeOutcome, IpConfig, IpEpisodeLog, IpRecord, MetricSnapshot};
pub use loss::{
    buffer_loss, buffer_loss_grad, loss_delta_grad, modeling_loss, observation_loss, IpAction, Observation,
};
pub use optimize::{ip_reward, optimize_params, OptConfig, OptResult};
pub use params::{GroupScales, ModelParams, ParamLayout, AXIS, JOINT_WIDTH, LOGITS, ORIENTATION, ORIGIN};
pub use policy::{movable_links, select_action, ActionBounds, SelectionPolicy};

use crate::autodiff::AdError;
use crate::diffsim::SimError;
use crate::perception::PerceptionError;
use crate::scene::SceneError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IpError {
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("no movable joint in the current tree")]
    NoMovableJoints,
    #[error("optimization diverged at step {step}: loss {loss} vs initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::diffsim::SoftSegmentation;
    use crate::par::Exec;
    use crate::perception::{sample_material, FlowMode, GroundTruthScene};
    use crate::scene::fixtures::door_model;
    use crate::scene::{JointSpatialMatrix, JointTypeMatrix, PhysicalAttrs, TreeStructure};

    pub const DOOR_POINTS: usize = 200;

    pub fn door_scene() -> GroundTruthScene {
        GroundTruthScene::at_rest(door_model(), 17)
    }

    /// Exact door parameters, the cloud at rest, and the observation of
    /// opening it by `angle` with ground-truth flow.
    pub fn door_setup(angle: f64) -> (ModelParams, TreeStructure, Vec<[f64; 3]>, Observation) {
        let scene = door_scene();
        let mat = sample_material(&scene.model, DOOR_POINTS, scene.seed).unwrap();
        let p0 = mat.pose(&scene.model, &[0.0]).unwrap();
        let p1 = mat.pose(&scene.model, &[angle]).unwrap();
        let mut j = JointTypeMatrix::zeros(2);
        *j.get_mut(1, 2) = [-1e3, 0.0, -1e3, -1e3];
        *j.get_mut(2, 1) = [5.0, 0.0, 0.0, 0.0];
        let mut c = JointSpatialMatrix::new(2);
        c.set(1, 2, [0.0, 0.0, 1.0], [-0.2, -0.16, 0.0], [0.0; 3]);
        let z = ModelParams {
            j,
            c,
            m: SoftSegmentation::from_labels(&mat.links, 2),
            alpha: vec![PhysicalAttrs::default(); 2],
        };
        let e = z.tree().unwrap();
        let obs = Observation::capture(
            p0.clone(),
            &p1,
            IpAction { link: 2, delta: angle },
            vec![0.0, 0.0],
            FlowMode::Gt,
            0,
            Exec::Sequential,
        )
        .unwrap();
        (z, e, p0, obs)
    }
}
