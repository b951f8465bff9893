//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset ingestion, training, and routing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error for record `{record_id}`, field `{field}`: {message}")]
    Validation {
        record_id: String,
        field: String,
        message: String,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{0}` has no average output length; populate it from the training split first")]
    MissingAvgOutputLength(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no training pairs available: {0}")]
    EmptyTrainingSet(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("record `{record_id}`: {message}")]
    InsufficientSamples { record_id: String, message: String },

    #[error(
        "target cost reduction {target}% is unachievable; achievable range is [{lo}%, {hi}%]"
    )]
    UnachievableTarget { target: f64, lo: f64, hi: f64 },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
