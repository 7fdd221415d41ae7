use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Grid, raster or file structure does not match what was expected.
    #[error("schema error: {0}")]
    Schema(String),

    /// A malformed record in a text file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Requested years or months are not present in the data.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// Mismatched vector or matrix dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// API misuse: invalid configuration, stale cache, empty dataset, misaligned inputs.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file written by an incompatible format version.
    #[error("incompatible file version: found {found}, expected {expected}")]
    Version { found: u8, expected: u8 },

    /// Truncated or corrupted file.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
