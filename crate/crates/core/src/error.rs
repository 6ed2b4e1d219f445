use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Violated pre-condition, bad parameter or bad configuration.
    Contract,
    /// File system or file format failures.
    Io,
    /// Numerical breakdown (singular matrices, degenerate clusters).
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined for this input: {0}")]
    Undefined(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("size mismatch: expected {expected} payload bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Format(_) | Error::SizeMismatch { .. } | Error::Io { .. } => ErrorCategory::Io,
            Error::Degenerate(_) | Error::Numerical(_) => ErrorCategory::Numerical,
            _ => ErrorCategory::Contract,
        }
    }

    /// I/O failure on `path`.
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
