use std::sync::Arc;

use fimroute::backend::{Backend, GenerationParams, ReplayBackend};
use fimroute::eval::{evaluate_strategy, EvalReport, Judge, TaskDecision};
use fimroute::model::{Completion, FimTask, PredictionSet, TokenLogProb};
use fimroute::records::{build_outcome_records, OutcomeRecord};
use fimroute::routers::{Policy, Router, RouterConfig, TrainedParams};
use fimroute::synth::{synthesize, SynthConfig};
use fimroute::syntax::{CheckerRegistry, SyntaxGate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        }
    }
}

pub struct Outcome {
    pub status: Status,
    pub detail: String,
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn pass(detail: impl Into<String>) -> Self {
        Outcome {
            status: Status::Pass,
            detail: detail.into(),
            notes: vec![],
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Outcome {
            status: Status::Fail,
            detail: detail.into(),
            notes: vec![],
        }
    }

    pub fn skip(detail: impl Into<String>) -> Self {
        Outcome {
            status: Status::Skip,
            detail: detail.into(),
            notes: vec![],
        }
    }

    pub fn check(ok: bool, detail: impl Into<String>) -> Self {
        if ok {
            Outcome::pass(detail)
        } else {
            Outcome::fail(detail)
        }
    }

    pub fn with_notes(mut self, notes: Vec<String>) -> Self {
        self.notes = notes;
        self
    }
}

/// Collects failure messages; the first few are reported.
#[derive(Default)]
pub struct Failures(pub Vec<String>);

impl Failures {
    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn summary(&self) -> String {
        let shown: Vec<&str> = self.0.iter().take(3).map(String::as_str).collect();
        format!("{} failures, e.g. {}", self.0.len(), shown.join("; "))
    }
}

pub fn default_gate() -> SyntaxGate {
    SyntaxGate::new(Arc::new(CheckerRegistry::with_defaults()))
}

/// Dataset, predictions and per-task outcome records for one model pair.
pub struct Fixture {
    pub tasks: Vec<FimTask>,
    pub predictions: Arc<PredictionSet>,
    pub records: Vec<OutcomeRecord>,
    pub gate: SyntaxGate,
    pub local: ReplayBackend,
    pub remote: ReplayBackend,
    pub local_id: String,
    pub remote_id: String,
}

impl Fixture {
    pub fn from_synth(config: &SynthConfig) -> Fixture {
        let art = synthesize(config).expect("valid synthetic config");
        let predictions = PredictionSet::from_records(art.predictions).unwrap();
        Fixture::new(art.tasks, predictions, &config.local.model_id, &config.remote.model_id)
    }

    pub fn new(tasks: Vec<FimTask>, predictions: PredictionSet, local: &str, remote: &str) -> Fixture {
        let gate = default_gate();
        let records = build_outcome_records(
            &tasks,
            &predictions,
            local,
            remote,
            RouterConfig::default().confidence_metric,
            &gate,
        )
        .expect("complete predictions");
        Fixture {
            local: ReplayBackend::new(local, &predictions, &tasks),
            remote: ReplayBackend::new(remote, &predictions, &tasks),
            tasks,
            predictions: Arc::new(predictions),
            records,
            gate,
            local_id: local.to_owned(),
            remote_id: remote.to_owned(),
        }
    }

    /// The tasks at `idx`, with records and gate preloads rebuilt.
    pub fn subset(&self, idx: &[usize]) -> Fixture {
        let tasks = idx.iter().map(|&i| self.tasks[i].clone()).collect();
        Fixture::new(tasks, (*self.predictions).clone(), &self.local_id, &self.remote_id)
    }

    /// Live routing over every task with replayed completions.
    pub fn evaluate(&self, config: RouterConfig, trained: Option<TrainedParams>) -> (EvalReport, Vec<TaskDecision>) {
        let policy = config.policy;
        let router = Router::new(config, trained).expect("valid router config");
        let judge = Judge::recorded(self.predictions.clone());
        evaluate_strategy(policy.as_str(), &router, &self.tasks, &self.local, &self.remote, &self.gate, &judge)
            .expect("evaluation succeeds")
    }
}

pub fn router_config(policy: Policy, threshold: f64) -> RouterConfig {
    RouterConfig {
        threshold,
        ..RouterConfig::with_policy(policy)
    }
}

/// Answers every request with the same short completion.
pub struct ConstantBackend {
    pub model_id: String,
    pub text: String,
    pub confidence: f64,
}

impl Backend for ConstantBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, _task: &FimTask, _params: &GenerationParams) -> fimroute::Result<Completion> {
        Ok(Completion {
            text: self.text.clone(),
            raw_text: self.text.clone(),
            model_id: self.model_id.clone(),
            tokens: (0..3)
                .map(|i| TokenLogProb::new(format!("t{i}"), self.confidence.ln()))
                .collect(),
            ..Completion::default()
        })
    }
}

pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}
