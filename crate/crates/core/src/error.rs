use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer `{layer}`: expected input shape {expected:?}, got {got:?}")]
    LayerShape {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("layer `{0}` is not recorded on the tape or in the model")]
    UnknownLayer(String),

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("checksum mismatch for tensor `{0}`")]
    Checksum(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        norms: String,
    },

    #[error("gradient ascent for `{layer}` filter {filter} decreased the objective after {halvings} step-size halvings: {detail}")]
    AscentFailure {
        layer: String,
        filter: usize,
        halvings: usize,
        detail: String,
    },

    #[error("pruning plan does not match model: {0}")]
    Plan(String),

    #[error("layer `{0}` cannot be pruned")]
    NotPrunable(String),

    #[error("trace target `{layer}` filter {filter} was pruned")]
    TraceTargetPruned { layer: String, filter: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}
