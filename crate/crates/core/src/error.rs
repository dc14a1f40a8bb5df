use thiserror::Error;

use crate::lyapunov::PiTrace;

pub type Result<T, E = SlqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SlqError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),

    #[error("{0}")]
    InvalidInput(String),

    #[error(
        "rank deficient system: numerical rank {rank} < {cols} columns (condition {condition:.3e})"
    )]
    RankDeficient {
        rank: usize,
        cols: usize,
        condition: f64,
    },

    #[error("Lyapunov operator is singular; closed loop is not mean-square stable")]
    SingularOperator,

    #[error("gain is not a mean-square stabilizer{}", .iteration.map(|i| format!(" (iteration {i})")).unwrap_or_default())]
    NotStabilizing { iteration: Option<usize> },

    #[error("R + D'PD is numerically singular")]
    SingularInnerMatrix,

    #[error("no convergence after {iterations} iterations")]
    MaxIterationsExceeded {
        iterations: usize,
        trace: Box<PiTrace>,
    },

    #[error("state norm exceeded {bound:e} on path {path} at step {step}")]
    NumericalBlowup {
        path: usize,
        step: usize,
        bound: f64,
    },

    #[error("sample Gram matrix XX' is singular (condition {condition:.3e}); trajectory is not exciting")]
    SingularGram { condition: f64 },

    #[error("D lacks full column rank and no estimation gain was supplied")]
    NoValidGain,
}
