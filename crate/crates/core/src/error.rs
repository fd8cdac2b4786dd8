use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("bundle format error: {0}")]
    Format(String),

    #[error("tensor `{tensor}` shape mismatch: {detail}")]
    ShapeMismatch { tensor: String, detail: String },

    #[error("tensor `{tensor}` holds a non-finite value at flat offset {offset}")]
    NonFinite { tensor: String, offset: usize },

    #[error("tensor `{tensor}` has unsupported dtype `{dtype}`")]
    UnknownDtype { tensor: String, dtype: String },

    #[error("bundle violates invariants: {0}")]
    InvalidBundle(String),

    #[error("malformed flow network: {0}")]
    MalformedNetwork(String),

    #[error("node {0} is not part of the network")]
    UnknownNode(usize),

    #[error("flow is unbounded: an all-infinite path connects source and terminal")]
    Unbounded,

    #[error("invalid build specification: {0}")]
    InvalidSpec(String),

    #[error("normalization failed: {0}")]
    Normalization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }
}
