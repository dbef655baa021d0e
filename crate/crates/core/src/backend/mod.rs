//! Completion backends: live OpenAI-compatible endpoints, replay of recorded
//! predictions, and a seeded synthetic model.

mod http;
mod replay;
mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{load_dataset, load_predictions, Completion, FimTask};

pub use http::{build_messages, ChatMessage, HttpBackend, HttpBackendConfig, CURSOR_MARKER, SYSTEM_PROMPT};
pub use replay::ReplayBackend;
pub use synthetic::{ConfidenceDist, SubtypeProbs, SyntheticBackend, SyntheticDraw, SyntheticModelSpec, SyntheticOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub want_logprobs: bool,
    /// Seconds.
    pub request_timeout: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 50,
            want_logprobs: true,
            request_timeout: 30.0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Validation(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Validation("max_tokens must be >= 1".into()));
        }
        if !(self.request_timeout > 0.0) {
            return Err(Error::Validation("request_timeout must be > 0".into()));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Produces a post-processed completion for `task`. An empty completion
    /// is a valid result, distinct from every error.
    fn generate(&self, task: &FimTask, params: &GenerationParams) -> Result<Completion>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn generate(&self, task: &FimTask, params: &GenerationParams) -> Result<Completion> {
        (**self).generate(task, params)
    }
}

/// Config-file description of a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http(HttpBackendConfig),
    Replay {
        model_id: String,
        predictions: PathBuf,
        dataset: PathBuf,
    },
    Synthetic {
        spec: SyntheticModelSpec,
        /// Tasks supplying ground truth; requests are matched by content.
        dataset: PathBuf,
    },
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn Backend>> {
        Ok(match self {
            BackendConfig::Http(cfg) => Arc::new(HttpBackend::new(cfg.clone())?),
            BackendConfig::Replay {
                model_id,
                predictions,
                dataset,
            } => {
                let tasks = load_dataset(dataset)?;
                let preds = load_predictions(predictions, Some(&tasks))?;
                Arc::new(ReplayBackend::new(model_id.clone(), &preds, &tasks))
            }
            BackendConfig::Synthetic { spec, dataset } => {
                let tasks = load_dataset(dataset)?;
                Arc::new(SyntheticBackend::new(spec.clone())?.with_tasks(&tasks))
            }
        })
    }
}

/// Key used to match requests without an id against known tasks.
pub(crate) fn content_key(task: &FimTask) -> (String, String, String) {
    (
        task.language.to_string(),
        task.prefix.clone(),
        task.suffix.clone(),
    )
}
