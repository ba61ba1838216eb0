use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("horizon must be at least one step")]
    InvalidHorizon,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("zero standard deviation for {0}; the tail bound needs a non-zero spread")]
    ZeroStd(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{kind} bound is undefined at {what} = {value}")]
    BoundDomain {
        kind: &'static str,
        what: &'static str,
        value: f64,
    },

    #[error("infeasible risk allocation: {0}")]
    InfeasibleAllocation(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("scenario is infeasible: {0}")]
    Infeasible(String),

    #[error("solver backend failure: {0}")]
    Backend(String),

    #[error("disturbance is not samplable: {0}")]
    NotSamplable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
