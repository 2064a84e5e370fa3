use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Checkpoint(CheckpointError::Io { .. })
        )
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("checkpoint is truncated or malformed: {0}")]
    Malformed(String),

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("checkpoint tensor {0} missing")]
    MissingTensor(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
