use thiserror::Error;

use crate::picard::PicardReport;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    /// The terminal value sits below the barrier on some path. The reflected
    /// equation has no solution in that case since `xi - S_T` must be non-negative.
    #[error("inadmissible terminal data on path {path}: xi = {xi} < S_T = {barrier} (xi - S_T must be non-negative)")]
    Admissibility { path: usize, xi: f64, barrier: f64 },

    #[error("rank-deficient regression design at slice {slice}; use a ridge weight > 0")]
    RankDeficient { slice: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("Picard iteration did not converge after {} iterations", .0.iterations.len())]
    NonConvergence(Box<PicardReport>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
