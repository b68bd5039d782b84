use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Exit-code mapping for the CLI:
/// usage = 2, validation = 3, numeric/truncation = 4, integrity = 5.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("completeness error: {0}")]
    Completeness(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("state audit failure: {0}")]
    Audit(String),

    #[error("calibration requires at least {required} retained samples, got {got}")]
    CalibrationInsufficiency { required: usize, got: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI surface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Parse { .. }
            | Error::Domain(_)
            | Error::Conflict(_)
            | Error::Shape(_)
            | Error::Completeness(_)
            | Error::Validation(_)
            | Error::CalibrationInsufficiency { .. } => 3,
            Error::Numeric(_) | Error::Truncation(_) | Error::Audit(_) => 4,
            Error::Integrity(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
