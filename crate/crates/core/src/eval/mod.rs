//! Execution-based evaluation of routing strategies.

mod report;
mod sandbox;

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rayon::prelude::*;

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::model::{Completion, FimTask, PredictionSet};
use crate::routers::Router;
use crate::syntax::SyntaxGate;

pub use report::{
    complementarity, failure_decomposition, oracle_bound, render_table, Complementarity, Counts, EvalReport,
    FailureDecomposition, Ratio, TaskDecision,
};
pub use sandbox::{ExecOutcome, ExecStatus, Sandbox, SandboxConfig};

enum JudgeMode {
    Recorded(Arc<PredictionSet>),
    Execute(Sandbox),
}

/// Decides whether a final completion passes: by recorded `passed` flags
/// (replay) or by running the tests. Results are memoized per
/// `(task id, model id, text)`.
pub struct Judge {
    mode: JudgeMode,
    cache: Mutex<HashMap<(String, String, String), bool>>,
}

impl Judge {
    /// Looks up the `passed` flag recorded for the completion's model.
    pub fn recorded(predictions: Arc<PredictionSet>) -> Judge {
        Judge {
            mode: JudgeMode::Recorded(predictions),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn executing(sandbox: Sandbox) -> Judge {
        Judge {
            mode: JudgeMode::Execute(sandbox),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn passed(&self, task: &FimTask, completion: &Completion) -> Result<bool> {
        let key = (task.id.clone(), completion.model_id.clone(), completion.text.clone());
        if let Some(&hit) = self.cache.lock().get(&key) {
            return Ok(hit);
        }
        let passed = match &self.mode {
            JudgeMode::Recorded(preds) => preds
                .get(&task.id, &completion.model_id)
                .ok_or_else(|| Error::MissingRecord {
                    task_id: task.id.clone(),
                    model_id: completion.model_id.clone(),
                })?
                .passed
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "record for task `{}` and model `{}` has no `passed` outcome",
                        task.id, completion.model_id
                    ))
                })?,
            JudgeMode::Execute(sandbox) => sandbox.execute_pass1(task, &completion.text)?.passed(),
        };
        self.cache.lock().insert(key, passed);
        Ok(passed)
    }
}

/// Routes every task, judges the final completion and aggregates. Backend
/// failures are counted per task; every other error aborts the run.
pub fn evaluate_strategy(
    strategy: &str,
    router: &Router,
    tasks: &[FimTask],
    local: &dyn Backend,
    remote: &dyn Backend,
    gate: &SyntaxGate,
    judge: &Judge,
) -> Result<(EvalReport, Vec<TaskDecision>)> {
    if tasks.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let decisions: Vec<TaskDecision> = tasks
        .par_iter()
        .map(|task| match router.route(task, local, remote, gate) {
            Ok(d) => Ok(TaskDecision {
                task_id: task.id.clone(),
                kept_local: d.kept_local,
                reason: d.reason,
                confidence: d.confidence,
                syntax: d.syntax_verdict.as_ref().map(|v| v.status),
                passed: judge.passed(task, &d.final_completion)?,
                model_id: d.final_completion.model_id,
                error: None,
            }),
            Err(Error::Backend(err)) => {
                tracing::warn!(task = %task.id, error = %err, "backend failure during evaluation");
                Ok(TaskDecision {
                    task_id: task.id.clone(),
                    kept_local: false,
                    reason: crate::model::RouteReason::RemoteUnavailable,
                    confidence: None,
                    syntax: None,
                    model_id: String::new(),
                    passed: false,
                    error: Some(err.to_string()),
                })
            }
            Err(other) => Err(other),
        })
        .collect::<Result<_>>()?;
    let threshold = router.policy().uses_threshold().then(|| router.config().threshold);
    let report = EvalReport::aggregate(strategy, router.policy(), threshold, &decisions);
    Ok((report, decisions))
}
