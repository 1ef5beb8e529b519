use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or inconsistent input data (scene files, masks, images).
    #[error("{0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Ply {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("weight file, layer {layer}: {message}")]
    Weights { layer: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },

    #[error("diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
