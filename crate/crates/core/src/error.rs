use thiserror::Error;

/// Errors raised by the `icl-core` library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate covariance: {0}")]
    DegenerateFit(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("sequence of {len} tokens exceeds max_positions = {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
