//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetourError {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An operation was called with inputs outside its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A loss was requested over an empty supervision set.
    #[error("empty supervision set")]
    EmptySupervision,

    /// File-format parse failure (checkpoints, corpora, datasets, specs).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DetourError>;
