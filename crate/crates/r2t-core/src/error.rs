//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration field is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An I/O failure, annotated with the file it concerns.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not match the expected format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A fit was requested with fewer valid observations than parameters.
    #[error("underdetermined fit: {observed} valid observations for {params} parameters")]
    Underdetermined { observed: usize, params: usize },

    /// A non-finite value appeared where the math requires finite numbers.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training aborted (NaN loss, impossible split, ...).
    #[error("training error at epoch {epoch}, batch {batch}: {reason}")]
    Training {
        epoch: usize,
        batch: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
