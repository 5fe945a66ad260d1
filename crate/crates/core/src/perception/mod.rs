//! Synthetic sensing: surface sampling of ground-truth scenes, segmentation
//! corruption, two-pose joint fitting, scene flow and nearest-point
//! correspondence.

mod cloud;
mod correspondence;
mod flow;
mod joint_fit;
mod sampling;
mod segmentation;

pub use cloud::{GroundTruthScene, PointCloud, SceneFlow};
pub use correspondence::{brute_nearest, real_correspondence, KdTree};
pub use flow::{estimate_scene_flow, FlowMode, DEFAULT_FLOW_SIGMA};
pub use joint_fit::{fit_logits, fit_pair, group_points, init_joint_estimates, kabsch, FitThresholds, PairFit};
pub use sampling::{sample_material, sample_point_cloud, MaterialPoints};
pub use segmentation::{boundary_distances, corrupt_segmentation};

use crate::scene::SceneError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptionError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unknown flow mode {0:?}")]
    UnknownFlowMode(String),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("bad point-cloud record: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
