use std::path::PathBuf;

use crate::space::{Architecture, SpaceError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Space(#[from] SpaceError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("network is frozen: {0}")]
    Frozen(String),

    #[error("feature extractors must be frozen during search")]
    UnfrozenExtractors,

    #[error("format error: {0}")]
    Format(#[from] crate::formats::FormatError),

    #[error("config error: {0}")]
    Config(String),

    #[error("evaluation of {arch} failed: {source}")]
    Evaluation {
        arch: Architecture,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
