//! Articulated-scene modeling and manipulation on a differentiable simulator.

pub mod autodiff;
pub mod geom;
pub mod par;
pub mod scene;
pub mod diffsim;
pub mod perception;
pub mod ip;
pub mod residual;
pub mod manipulation;
pub mod harness;
