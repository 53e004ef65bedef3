use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("mesh generation failed: degenerate element {element}")]
    GenerationFailure { element: usize },

    #[error("non-positive Jacobian at element {element}, quadrature point {point}")]
    NonPositiveJacobian { element: usize, point: usize },

    #[error("inverted element state: J = {j}")]
    Inverted { j: f64 },

    #[error("Gent lock-up: Ibar1 - 3 = {value} reaches Jm = {jm}")]
    GentLockup { value: f64, jm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Newton solver failed at step {step}: {message}")]
    Solver { step: usize, message: String },

    #[error("training diverged at epoch {epoch}: non-finite loss for {streak} consecutive epochs")]
    Divergence {
        epoch: usize,
        streak: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
