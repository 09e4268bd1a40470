//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensor shapes that were required to agree did not.
    #[error("{context}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A scalar or structural argument violated an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An architecture description cannot be realized.
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// A PPM/PGM payload could not be decoded; `offset` is the byte at
    /// which decoding failed.
    #[error("image format error at byte {offset}: {message}")]
    ImageFormat { offset: usize, message: String },

    /// A dataset manifest could not be parsed or is internally inconsistent.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// A checkpoint payload could not be decoded.
    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    /// A numeric invariant broke at runtime (non-finite loss and similar).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An I/O failure, annotated with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape_mismatch(context: &str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
