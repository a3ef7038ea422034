use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("directory not found: {0}")]
    MissingDirectory(PathBuf),

    #[error("clip needs at least 2 frames, found {0}")]
    TooFewFrames(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("failed to encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("flow file format error: {0}")]
    FlowFormat(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("occlusion mask has no valid pixels")]
    EmptyMask,

    #[error("non-finite loss at epoch {epoch}, frame {frame}")]
    NonFiniteLoss { epoch: usize, frame: usize },

    #[error("trace is empty")]
    EmptyTrace,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
