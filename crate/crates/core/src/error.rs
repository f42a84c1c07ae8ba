//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed line in a tabular input file.
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown node id: {0}")]
    UnknownNode(String),

    #[error("unknown node type: {0}")]
    UnknownType(String),

    #[error("invalid meta-path {text:?}: {msg}")]
    MetaPath { text: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown entity id: {0}")]
    UnknownEntity(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
