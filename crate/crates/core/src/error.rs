use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("insufficient length: series has {len} steps, need at least {needed}")]
    InsufficientLength { len: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("period {period} exceeds window of length {len}")]
    PeriodExceedsWindow { period: usize, len: usize },

    #[error("empty key set")]
    EmptyKeySet,

    #[error("cannot resolve word {0:?} against the vocabulary")]
    UnresolvableWord(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("no alignment to export")]
    NoAlignment,

    #[error("empty test set")]
    EmptyTestSet,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
