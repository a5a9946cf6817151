use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An API contract was violated (shape mismatch, stale cache, call
    /// before reset, ...). These indicate programmer error at the call
    /// site rather than bad data.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data was rejected by validation.
    #[error("rejected: {0}")]
    Rejected(String),

    /// Noise calibration could not land the scripted success rate in the
    /// requested band.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// The planner could not reach the goal within the depth bound.
    #[error("goal unreachable: {0}")]
    Unreachable(String),

    /// A plan violated an option precondition during symbolic replay.
    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    /// Graph construction failed validation.
    #[error("graph construction: {0}")]
    Graph(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::Rejected(msg.into())
    }
}
