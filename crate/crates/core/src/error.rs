use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {field} at index {index}")]
    NonFinite { field: String, index: usize },

    #[error("grid fingerprint mismatch: file has {found}, active grid is {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("level mismatch: expected level {expected}, got {found}")]
    LevelMismatch { expected: usize, found: usize },

    #[error("singular tridiagonal system: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("dense assembly of {size} unknowns exceeds the cap of {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("malformed profile file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
