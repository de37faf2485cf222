//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A rendering or scene parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Tensor or layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A class or cell label is outside the admissible range.
    #[error("invalid label: {0}")]
    InvalidLabel(String),

    /// An input violates an operation precondition (empty set, length mismatch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite value surfaced where finite arithmetic is required.
    #[error("numeric error: {0}")]
    NonFinite(String),

    /// Loop and state configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoint or export serialization failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A checkpoint file is malformed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
