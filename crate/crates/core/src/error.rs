use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("zero frames in {}", .0.display())]
    ZeroFrames(PathBuf),

    #[error("inconsistent frame dimensions: {first} has {expected:?}, {other} has {actual:?}")]
    InconsistentFrames {
        first: String,
        other: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("prior error: {0}")]
    Prior(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("external prior timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
