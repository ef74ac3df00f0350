use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the experiment harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] icl_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),

    #[error("unknown model {0:?}")]
    UnknownModel(String),

    #[error("no usable checkpoint for {model} at {path} (pass --train-first to train it)")]
    MissingCheckpoint { model: String, path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
