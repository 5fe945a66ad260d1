//! Scalar reverse-mode automatic differentiation.

mod check;
mod scalar;
mod tape;

pub use check::{grad_check, gradient, CoordCheck, GradCheckReport, DEFAULT_EPS};
pub use scalar::Scalar;
pub use tape::{ElementaryOp, Gradients, NodeKind, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("non-finite value {value} cannot enter the tape")]
    NonFinite { value: f64 },
    #[error("{op}: argument {arg} = {value} outside domain ({reason})")]
    Domain {
        op: &'static str,
        arg: usize,
        value: f64,
        reason: &'static str,
    },
    #[error("{op}: expected {expected} arguments, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op} produced a non-finite result")]
    NonFiniteResult { op: &'static str },
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("evaluation failed at probe coordinate {coord}: {source}")]
    Probe { coord: usize, source: Box<AdError> },
}
