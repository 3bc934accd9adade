//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by the numeric kernels, simulators and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CeresError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The structural causal model failed validation; carries every violation found.
    #[error("invalid SCM spec: {}", .0.join("; "))]
    SpecError(Vec<String>),

    #[error("conditioning event has zero probability: {0}")]
    ConditionUnsupported(String),

    #[error("could not parse query {0:?}")]
    ParseError(String),

    #[error("invalid QP problem: {0}")]
    InvalidProblem(String),

    /// Iterative solver hit its budget. `best` is the last iterate.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("time index {got} is not after newest stored time {newest}")]
    TimeOrderError { newest: i64, got: i64 },

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CeresError {
    fn from(e: std::io::Error) -> Self {
        CeresError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CeresError {
    fn from(e: serde_json::Error) -> Self {
        CeresError::InvalidInput(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CeresError>;
