use std::collections::HashMap;

use super::{content_key, Backend, GenerationParams};
use crate::error::{Error, Result};
use crate::model::{Completion, FimTask, PredictionRecord, PredictionSet};
use crate::postprocess::postprocess;

/// Serves recorded completions for one model.
///
/// Requests are matched by task id first and then by `(language, prefix,
/// suffix)`, so id-less gateway requests replay too.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    model_id: String,
    by_id: HashMap<String, PredictionRecord>,
    by_content: HashMap<(String, String, String), String>,
}

impl ReplayBackend {
    pub fn new(model_id: impl Into<String>, predictions: &PredictionSet, tasks: &[FimTask]) -> Self {
        let model_id = model_id.into();
        let by_id = predictions.for_model(&model_id);
        let by_content = tasks
            .iter()
            .filter(|t| by_id.contains_key(&t.id))
            .map(|t| (content_key(t), t.id.clone()))
            .collect();
        ReplayBackend {
            model_id,
            by_id,
            by_content,
        }
    }

    pub fn record(&self, task: &FimTask) -> Option<&PredictionRecord> {
        self.by_id.get(&task.id).or_else(|| {
            self.by_content
                .get(&content_key(task))
                .and_then(|id| self.by_id.get(id))
        })
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, task: &FimTask, params: &GenerationParams) -> Result<Completion> {
        let record = self.record(task).ok_or_else(|| Error::MissingRecord {
            task_id: task.id.clone(),
            model_id: self.model_id.clone(),
        })?;
        let mut completion = record.completion(task);
        if completion.tokens.len() > params.max_tokens {
            let joined: String = completion.tokens.iter().map(|t| t.token_text.as_str()).collect();
            completion.tokens.truncate(params.max_tokens);
            if joined == completion.raw_text {
                completion.raw_text = completion.tokens.iter().map(|t| t.token_text.as_str()).collect();
                completion.text = postprocess(&completion.raw_text, task);
            }
        }
        Ok(completion)
    }
}
