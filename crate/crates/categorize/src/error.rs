use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CategorizeError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("embedding matrix needs at least two rows, found {0}")]
    TooFewRows(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data has zero variance")]
    ZeroVariance,

    #[error("mixture with {k} components degenerated after {collapses} component collapses")]
    Degenerate { k: usize, collapses: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CategorizeError>;
