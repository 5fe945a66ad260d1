//! Differentiable forward models: the soft point predictor, kinematics of
//! soft joint models, and joint-space dynamics for the object and the arm.
//! Everything is generic over [`Scalar`](crate::autodiff::Scalar) so the same
//! code runs on plain floats and on a tape.

mod dynamics;
mod joint;
mod kinematics;
mod points;
mod robot;

pub use dynamics::{object_dynamics_step, JointDynamics, ObjectState, DEFAULT_DT};
pub use joint::{blended, joint_transform, SoftJointParams};
pub use kinematics::SoftModel;
pub use points::{point_forward, project_simplex, SoftSegmentation};
pub use robot::{
    constraint_jacobian, constraint_map, grasped_state, handle_point, robot_step, Attachment, ObjectJoint, Perturbation,
    RobotArm, RobotState, SimScene, SimState, StepInfo, GRIP_RADIUS,
};

use crate::scene::{LinkId, SceneError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("link {0} has no joint in the model")]
    UnknownLink(LinkId),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
