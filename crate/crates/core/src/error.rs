use std::io;

use thiserror::Error;

/// Errors produced by the engine.
///
/// The variant names double as machine-readable error kinds on the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// Wrong magic bytes or unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// The payload ended early or has inconsistent sizes.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// Inputs violate a documented invariant (NaN features, label range, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was applied in a state where it is not allowed.
    #[error("invalid state: {0}")]
    State(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    /// Short kind tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Corrupt(_) => "corrupt",
            Error::Validation(_) => "validation",
            Error::State(_) => "state",
            Error::Unsupported(_) => "unsupported",
            Error::Dimension(_) => "dimension",
            Error::OutOfRange { .. } => "out-of-range",
            Error::Numerical(_) => "numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
