#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use fimroute::backend::{Backend, GenerationParams};
use fimroute::model::{Completion, FimTask, TokenLogProb};
use fimroute::{BackendError, Error, Result};

/// Completion whose first-three-token confidence is exactly `confidence`.
pub fn completion(model: &str, text: &str, confidence: f64) -> Completion {
    Completion {
        raw_text: text.to_owned(),
        text: text.to_owned(),
        tokens: (0..3).map(|i| TokenLogProb::new(format!("t{i}"), confidence.ln())).collect(),
        model_id: model.to_owned(),
        latency: 0.0,
    }
}

/// Backend answering from a fixed table and counting calls.
pub struct StubBackend {
    pub id: String,
    pub answers: HashMap<String, Completion>,
    pub fallback: Option<Completion>,
    pub fail: bool,
    pub calls: AtomicUsize,
}

impl StubBackend {
    pub fn new(id: &str) -> Self {
        StubBackend {
            id: id.to_owned(),
            answers: HashMap::new(),
            fallback: None,
            fail: false,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn always(id: &str, text: &str, confidence: f64) -> Self {
        StubBackend {
            fallback: Some(completion(id, text, confidence)),
            ..StubBackend::new(id)
        }
    }

    pub fn failing(id: &str) -> Self {
        StubBackend {
            fail: true,
            ..StubBackend::new(id)
        }
    }

    pub fn answer(mut self, task_id: &str, text: &str, confidence: f64) -> Self {
        self.answers.insert(task_id.to_owned(), completion(&self.id, text, confidence));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for StubBackend {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, task: &FimTask, _params: &GenerationParams) -> Result<Completion> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail {
            return Err(Error::Backend(BackendError {
                backend: self.id.clone(),
                message: "stub configured to fail".into(),
                retry_safe: true,
            }));
        }
        self.answers
            .get(&task.id)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| Error::MissingRecord {
                task_id: task.id.clone(),
                model_id: self.id.clone(),
            })
    }
}
