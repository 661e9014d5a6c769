use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// A type with revocation rate 1 never stays, so its aggregated
    /// marginal cost divides by zero.
    #[error("type {index} always revokes (p = 1); aggregated marginal cost is undefined")]
    DegenerateType { index: usize },

    #[error("inputs must be ordered by ascending aggregated marginal cost (violated at position {position})")]
    Unsorted { position: usize },

    #[error("data sizes must be non-increasing (violated at position {position})")]
    NonMonotone { position: usize },

    #[error("{what} of size {size} exceeds the limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("step size {step} exceeds 1/(12L) = {limit}")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("not converged after {rounds} rounds")]
    NotConverged { rounds: usize },

    #[error("linear algebra failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
