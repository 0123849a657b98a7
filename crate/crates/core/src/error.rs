use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the few-shot pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown shape family `{0}`")]
    UnknownFamily(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("malformed record {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },

    #[error("class {0} is not declared in the split manifest")]
    UnknownClass(i64),

    #[error("overlap between base and novel classes: {0:?}")]
    Overlap(Vec<i64>),

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("insufficient classes: need {needed}, pool has {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("insufficient examples for class {class_id}: need {needed}, have {available}")]
    InsufficientExamples {
        class_id: i64,
        needed: usize,
        available: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} out of range for {n_way} classes")]
    LabelOutOfRange { label: usize, n_way: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by input data rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidCloud(_)
                | Error::MalformedRecord { .. }
                | Error::UnknownClass(_)
                | Error::Overlap(_)
                | Error::CountMismatch(_)
                | Error::InsufficientClasses { .. }
                | Error::InsufficientExamples { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Empty(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
