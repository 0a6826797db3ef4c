use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("target column {0:?} not found in header")]
    MissingTarget(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("column {column:?} is constant; cannot be scaled")]
    ConstantColumn { column: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature with {points} points cannot integrate degree {degree} exactly")]
    QuadratureTooSmall { points: usize, degree: usize },

    #[error("cholesky factorization failed after jitter {jitter:e}: {context}")]
    Factorization { jitter: f64, context: String },

    #[error("all {n_trials} trials failed; last failure: {last}")]
    AllTrialsFailed { n_trials: usize, last: String },

    #[error("model document: {0}")]
    Model(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
