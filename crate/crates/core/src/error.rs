use std::path::PathBuf;

use thiserror::Error;

use crate::graph::EntityId;

#[derive(Debug, Error)]
pub enum TkgError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: entity `{entity}` has category `{found}` but was first seen as `{expected}`")]
    InconsistentCategory {
        path: PathBuf,
        line: usize,
        entity: String,
        expected: String,
        found: String,
    },

    #[error("entity `{0}` has no category in the category map")]
    MissingCategory(String),

    #[error("quadruple data needs a category map or an explicit single default category")]
    CategoriesRequired,

    #[error("{0}: dataset file contains no facts")]
    EmptyDataset(PathBuf),

    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rule bank schema mismatch: file has `{found}`, expected `{expected}`")]
    BankSchema { found: String, expected: String },

    #[error("rule bank record {index} is corrupted: {message}")]
    BankRecord { index: usize, message: String },

    #[error("candidate table is empty")]
    EmptyCandidates,

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("candidate entity {0} has no category")]
    Uncategorized(EntityId),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TkgError>;
