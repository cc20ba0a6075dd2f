use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("dictionary construction failed: {0}")]
    Construction(String),

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("backward requires a 1x1 scalar, got {0}x{1}")]
    NotScalar(usize, usize),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error at {location}: {reason}")]
    Config { location: String, reason: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
