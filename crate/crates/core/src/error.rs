use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no recorded prediction for task `{task_id}` and model `{model_id}`")]
    MissingRecord { task_id: String, model_id: String },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("evaluation harness failure: {0}")]
    Harness(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Failure talking to a generation backend.
///
/// `retry_safe` is set when the request can be repeated without side effects
/// (timeouts, 5xx, connection resets).
#[derive(Debug, Clone, Error)]
#[error("backend `{backend}` failed: {message}")]
pub struct BackendError {
    pub backend: String,
    pub message: String,
    pub retry_safe: bool,
}
