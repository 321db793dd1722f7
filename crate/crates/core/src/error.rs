use thiserror::Error;

use crate::train::DivergenceReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("uninitialized running stats: BatchNorm evaluated before any train step")]
    UninitializedRunningStats,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("no RPE: relative position table is disabled")]
    NoRpe,
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("image: {0}")]
    Image(String),
    #[error("training diverged at iteration {}", .0.iteration)]
    Diverged(Box<DivergenceReport>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}
