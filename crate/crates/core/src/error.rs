use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scan header: {0}")]
    MalformedHeader(String),

    #[error("scan dimension error: {0}")]
    Dimension(String),

    #[error("truncated scan payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("pose {pose:?} at t={stamp:.3}s lies outside the world bounds")]
    OutOfBounds { stamp: f64, pose: (f64, f64) },

    #[error("trajectory passes through an obstacle near {pose:?} at t={stamp:.3}s")]
    Collision { stamp: f64, pose: (f64, f64) },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
