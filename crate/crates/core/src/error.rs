use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Variants are grouped so that front ends can map them onto exit codes:
/// invalid arguments, bad input data, and numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid probability vector: {0}")]
    InvalidSimplex(String),

    #[error("{path}: row {row}, column \"{column}\": {reason}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } => ErrorKind::Usage,
            Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
