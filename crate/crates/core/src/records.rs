//! Per-task outcome table shared by calibration and the analyses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceMetric;
use crate::error::{Error, Result};
use crate::model::{FimTask, PredictionSet};
use crate::routers::is_degenerate;
use crate::syntax::{SyntaxGate, SyntaxStatus, SyntaxVerdict};

/// What is known about one task after both models have answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub task_id: String,
    pub local_passed: bool,
    pub remote_passed: bool,
    /// Local model confidence.
    pub confidence: f64,
    /// Gate verdict on the local completion.
    pub syntax: SyntaxStatus,
    /// Local completion is empty or copies the last prefix line.
    pub degenerate: bool,
}

/// Builds the table from recorded predictions. Recorded `syntax_valid` flags
/// are preloaded into `gate` so live routing over the same gate agrees.
pub fn build_outcome_records(
    tasks: &[FimTask],
    predictions: &PredictionSet,
    local_model: &str,
    remote_model: &str,
    metric: ConfidenceMetric,
    gate: &SyntaxGate,
) -> Result<Vec<OutcomeRecord>> {
    tasks
        .par_iter()
        .map(|task| {
            let local = predictions.get(&task.id, local_model).ok_or_else(|| Error::MissingRecord {
                task_id: task.id.clone(),
                model_id: local_model.to_owned(),
            })?;
            let remote = predictions.get(&task.id, remote_model).ok_or_else(|| Error::MissingRecord {
                task_id: task.id.clone(),
                model_id: remote_model.to_owned(),
            })?;
            let outcome = |passed: Option<bool>, model: &str| {
                passed.ok_or_else(|| {
                    Error::Validation(format!(
                        "record for task `{}` and model `{model}` has no `passed` outcome",
                        task.id
                    ))
                })
            };
            let completion = local.completion(task);
            let confidence = metric.score(&completion)?.value;
            if let Some(valid) = local.syntax_valid {
                let status = if valid { SyntaxStatus::Valid } else { SyntaxStatus::Invalid };
                gate.preload(&task.id, &completion.text, SyntaxVerdict::recorded(status));
            }
            let syntax = gate.gate(task, &completion.text)?.status;
            Ok(OutcomeRecord {
                task_id: task.id.clone(),
                local_passed: outcome(local.passed, local_model)?,
                remote_passed: outcome(remote.passed, remote_model)?,
                confidence,
                syntax,
                degenerate: is_degenerate(&completion.text, &task.prefix),
            })
        })
        .collect()
}
