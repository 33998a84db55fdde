use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("integrity error: {reason} (first offending byte offset {offset})")]
    Integrity { reason: String, offset: u64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("chronogram geometry mismatch: {field} differs ({left} vs {right})")]
    Geometry {
        field: &'static str,
        left: String,
        right: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("window interval outside chronogram range: {0}")]
    WindowRange(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("inconsistent correlation matrix: combined variance is negative ({0})")]
    InconsistentCorrelation(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fit did not converge: {reason} (iterations {iterations}, cost {cost})")]
    NonConvergence {
        reason: String,
        iterations: usize,
        cost: f64,
    },

    #[error("unsupported configuration for closed-form expectations: {0}")]
    UnsupportedConfig(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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
