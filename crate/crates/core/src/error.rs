//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the autodiff engine, the linear-algebra kernels, the
/// optimizers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("activation {0} has no second derivative support")]
    UnsupportedActivation(&'static str),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("cholesky factorization of the shifted sketch core failed after {attempts} attempts")]
    NystromCholesky { attempts: usize },

    #[error("preconditioner undefined: smallest retained eigenvalue plus damping is zero")]
    SingularPreconditioner,

    #[error("residual diagonal became negative ({value:e}) at pivot step {step}")]
    NegativeResidualDiagonal { step: usize, value: f64 },

    #[error("dense operation on dimension {dim} exceeds guard {limit}")]
    GuardExceeded { dim: usize, limit: usize },

    #[error("exact solution has zero H1 norm")]
    ZeroNormExact,

    #[error("damping parameter is zero; the shifted system is singular")]
    ZeroDamping,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("unknown optimizer '{0}'")]
    UnknownOptimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
