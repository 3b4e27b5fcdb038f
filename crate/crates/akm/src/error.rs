//! Crate-wide error type.

use std::path::PathBuf;

/// Pipeline stage at which a backend call failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieve,
    Render,
    Generate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Retrieve => write!(f, "retrieve"),
            Stage::Render => write!(f, "render"),
            Stage::Generate => write!(f, "generate"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("transport error for {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("protocol error from {endpoint}: HTTP status {status}")]
    Protocol { endpoint: String, status: u16 },

    #[error("parse error: {message}; raw output: {raw:?}")]
    Parse { message: String, raw: String },

    #[error("answer set contains no usable candidate")]
    EmptyAnswerSet,

    #[error("vector index is empty")]
    EmptyIndex,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{stage} stage failed for backend {model_id}: {source}")]
    Backend {
        stage: Stage,
        model_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Tag an error with the backend pipeline stage it came from.
    pub fn at_stage(self, stage: Stage, model_id: &str) -> Error {
        Error::Backend {
            stage,
            model_id: model_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
