//! Learned correction of the differentiable stepper: a small network adds a
//! residual to the nominal next state and is fit to real transitions.

mod buffer;
mod explore;
mod net;
mod step;
mod train;

pub use buffer::{Transition, TransitionBuffer};
pub use explore::{explore_transitions, ExploreConfig};
pub use net::{Activation, NetConfig, ResidualMask, ResidualNet};
pub use step::{
    augmented_jacobians, augmented_step, nominal_step, residual_input, AugJacobians, Stepper, StepperKind,
};
pub use train::{augmented_loss, nominal_loss, train_residual, TrainConfig, TrainReport};

use crate::autodiff::AdError;
use crate::diffsim::SimError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResidualError {
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss {loss} vs initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}
