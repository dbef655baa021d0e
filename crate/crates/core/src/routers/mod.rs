//! Routing policies behind one interface: given a task and two backends,
//! produce a [`RouteDecision`].
//!
//! Post-inference policies (`synconf`, `confidence_only`, `cascade`) run the
//! local model first and decide from its output. Pre-inference policies
//! (tree, KNN, combined, ELO) pick a backend from the request alone and call
//! only that backend.

pub mod combined;
pub mod elo;
pub mod knn;
pub mod tree;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationParams};
use crate::confidence::ConfidenceMetric;
use crate::error::{Error, Result};
use crate::features::{extract_static_features, Embedder, HashedTfEmbedder};
use crate::model::{Completion, FimTask, RouteDecision, RouteReason};
use crate::syntax::{SyntaxGate, SyntaxStatus, SyntaxVerdict};

pub use combined::CombinedIndex;
pub use elo::{EloModel, EloSettings, Match};
pub use knn::KnnIndex;
pub use tree::DecisionTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Synconf,
    ConfidenceOnly,
    Cascade,
    StaticTree,
    EmbeddingKnn,
    Combined,
    EloBinary,
    EloTernary,
    AlwaysLocal,
    AlwaysRemote,
}

impl Policy {
    pub const ALL: [Policy; 10] = [
        Policy::AlwaysLocal,
        Policy::AlwaysRemote,
        Policy::ConfidenceOnly,
        Policy::Cascade,
        Policy::Synconf,
        Policy::StaticTree,
        Policy::EmbeddingKnn,
        Policy::Combined,
        Policy::EloBinary,
        Policy::EloTernary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Synconf => "synconf",
            Policy::ConfidenceOnly => "confidence_only",
            Policy::Cascade => "cascade",
            Policy::StaticTree => "static_tree",
            Policy::EmbeddingKnn => "embedding_knn",
            Policy::Combined => "combined",
            Policy::EloBinary => "elo_binary",
            Policy::EloTernary => "elo_ternary",
            Policy::AlwaysLocal => "always_local",
            Policy::AlwaysRemote => "always_remote",
        }
    }

    /// Decides after seeing the local completion.
    pub fn is_post_inference(self) -> bool {
        matches!(self, Policy::Synconf | Policy::ConfidenceOnly | Policy::Cascade)
    }

    /// Needs fitted parameters from calibration.
    pub fn is_trained(self) -> bool {
        matches!(
            self,
            Policy::StaticTree | Policy::EmbeddingKnn | Policy::Combined | Policy::EloBinary | Policy::EloTernary
        )
    }

    pub fn uses_threshold(self) -> bool {
        matches!(self, Policy::Synconf | Policy::ConfidenceOnly)
    }

    pub fn uses_gate(self) -> bool {
        self == Policy::Synconf
    }

    pub fn can_escalate(self) -> bool {
        self != Policy::AlwaysLocal
    }

    pub fn uses_local(self) -> bool {
        self != Policy::AlwaysRemote
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Policy::ALL.iter().map(|p| p.as_str()).collect();
                Error::Config(format!("unknown policy `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub policy: Policy,
    /// Confidence threshold t*.
    pub threshold: f64,
    pub cascade_low: f64,
    pub cascade_high: f64,
    pub confidence_metric: ConfidenceMetric,
    pub knn_k: usize,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub embedding_dim: usize,
    pub elo: EloSettings,
    pub generation: GenerationParams,
    /// Serve the local completion when escalation fails, instead of erroring.
    pub serve_local_on_remote_failure: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            policy: Policy::Synconf,
            threshold: 0.7,
            cascade_low: 0.6,
            cascade_high: 0.8,
            confidence_metric: ConfidenceMetric::FirstKMean,
            knn_k: knn::DEFAULT_K,
            tree_max_depth: tree::DEFAULT_MAX_DEPTH,
            tree_min_leaf: tree::DEFAULT_MIN_LEAF,
            embedding_dim: crate::features::DEFAULT_EMBEDDING_DIM,
            elo: EloSettings::default(),
            generation: GenerationParams::default(),
            serve_local_on_remote_failure: false,
        }
    }
}

impl RouterConfig {
    pub fn with_policy(policy: Policy) -> Self {
        RouterConfig {
            policy,
            ..RouterConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("threshold", self.threshold),
            ("cascade_low", self.cascade_low),
            ("cascade_high", self.cascade_high),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.cascade_low > self.cascade_high {
            return Err(Error::Validation(format!(
                "cascade_low ({}) must not exceed cascade_high ({})",
                self.cascade_low, self.cascade_high
            )));
        }
        if self.knn_k == 0 || self.embedding_dim == 0 {
            return Err(Error::Validation("knn_k and embedding_dim must be >= 1".into()));
        }
        self.elo.validate()?;
        self.generation.validate()
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            t_star: self.threshold,
            cascade_low: self.cascade_low,
            cascade_high: self.cascade_high,
        }
    }
}

/// Fitted parameters for the pre-inference policies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainedParams {
    pub tree: Option<DecisionTree>,
    pub knn: Option<KnnIndex>,
    pub combined: Option<CombinedIndex>,
    pub elo: Option<EloModel>,
    /// Dimension of the hashed embedding the indices were built with.
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub t_star: f64,
    pub cascade_low: f64,
    pub cascade_high: f64,
}

/// Outcome of a post-inference decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub kept_local: bool,
    pub reason: RouteReason,
}

impl Verdict {
    fn keep(reason: RouteReason) -> Self {
        Verdict {
            kept_local: true,
            reason,
        }
    }

    fn escalate(reason: RouteReason) -> Self {
        Verdict {
            kept_local: false,
            reason,
        }
    }
}

/// Empty, or a verbatim copy of the last non-blank prefix line.
pub fn is_degenerate(completion_text: &str, prefix: &str) -> bool {
    let text = completion_text.trim();
    text.is_empty()
        || prefix
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .is_some_and(|l| l.trim() == text)
}

/// Keep/escalate for post-inference and fixed policies, shared by live
/// routing and offline calibration. `gate` runs only when the policy reaches
/// the syntax stage.
pub fn decide(
    policy: Policy,
    thresholds: &Thresholds,
    confidence: f64,
    degenerate: bool,
    gate: impl FnOnce() -> Result<SyntaxStatus>,
) -> Result<Verdict> {
    Ok(match policy {
        Policy::AlwaysLocal => Verdict::keep(RouteReason::PolicyPreInference),
        Policy::AlwaysRemote => Verdict::escalate(RouteReason::PolicyPreInference),
        Policy::ConfidenceOnly => {
            if confidence < thresholds.t_star {
                Verdict::escalate(RouteReason::LowConfidence)
            } else {
                Verdict::keep(RouteReason::ConfidentValid)
            }
        }
        Policy::Synconf => {
            if confidence < thresholds.t_star {
                Verdict::escalate(RouteReason::LowConfidence)
            } else {
                match gate()? {
                    SyntaxStatus::Valid => Verdict::keep(RouteReason::ConfidentValid),
                    SyntaxStatus::Invalid => Verdict::escalate(RouteReason::SyntaxInvalid),
                    SyntaxStatus::CheckerError => Verdict::escalate(RouteReason::CheckerError),
                }
            }
        }
        Policy::Cascade => {
            if confidence < thresholds.cascade_low {
                Verdict::escalate(RouteReason::LowConfidence)
            } else if confidence >= thresholds.cascade_high || !degenerate {
                Verdict::keep(RouteReason::ConfidentValid)
            } else {
                Verdict::escalate(RouteReason::BorderlineDegenerate)
            }
        }
        other => {
            return Err(Error::Config(format!(
                "policy `{other}` decides before inference and has no post-inference rule"
            )))
        }
    })
}

/// A configured router; immutable and safe to share across threads.
pub struct Router {
    config: RouterConfig,
    trained: Option<TrainedParams>,
    embedder: Arc<dyn Embedder>,
}

impl fmt::Debug for Router {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Router")
            .field("policy", &self.config.policy)
            .field("threshold", &self.config.threshold)
            .finish_non_exhaustive()
    }
}

impl Router {
    pub fn new(config: RouterConfig, trained: Option<TrainedParams>) -> Result<Router> {
        config.validate()?;
        let dim = trained
            .as_ref()
            .map(|t| t.embedding_dim)
            .filter(|&d| d > 0)
            .unwrap_or(config.embedding_dim);
        let router = Router {
            embedder: Arc::new(HashedTfEmbedder { dim }),
            config,
            trained,
        };
        if router.config.policy.is_trained() {
            router.trained_component()?;
        }
        Ok(router)
    }

    /// Swaps in a different embedding provider for KNN, combined and ELO.
    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn policy(&self) -> Policy {
        self.config.policy
    }

    fn trained_component(&self) -> Result<()> {
        let missing = |what: &str| {
            Error::Config(format!(
                "policy `{}` requires trained {what} parameters from calibration",
                self.config.policy
            ))
        };
        let t = self.trained.as_ref().ok_or_else(|| missing("router"))?;
        match self.config.policy {
            Policy::StaticTree if t.tree.is_none() => Err(missing("tree")),
            Policy::EmbeddingKnn if t.knn.is_none() => Err(missing("knn")),
            Policy::Combined if t.combined.is_none() => Err(missing("combined")),
            Policy::EloBinary | Policy::EloTernary if t.elo.is_none() => Err(missing("elo")),
            _ => Ok(()),
        }
    }

    /// Backend choice of a pre-inference or fixed policy; `true` is local.
    pub fn pre_inference_choice(&self, task: &FimTask) -> Result<bool> {
        let trained = self.trained.as_ref();
        let missing = || Error::Config(format!("policy `{}` has no trained parameters", self.config.policy));
        match self.config.policy {
            Policy::AlwaysLocal => Ok(true),
            Policy::AlwaysRemote => Ok(false),
            Policy::StaticTree => {
                let tree = trained.and_then(|t| t.tree.as_ref()).ok_or_else(missing)?;
                Ok(tree.predict(&extract_static_features(task).to_array()))
            }
            Policy::EmbeddingKnn => {
                let knn = trained.and_then(|t| t.knn.as_ref()).ok_or_else(missing)?;
                knn.predict(&self.embedder.embed_task(task))
            }
            Policy::Combined => {
                let idx = trained.and_then(|t| t.combined.as_ref()).ok_or_else(missing)?;
                idx.predict(&extract_static_features(task), &self.embedder.embed_task(task))
            }
            Policy::EloBinary | Policy::EloTernary => {
                let elo = trained.and_then(|t| t.elo.as_ref()).ok_or_else(missing)?;
                Ok(elo.prefers_local(
                    &self.embedder.embed_task(task),
                    self.config.policy == Policy::EloTernary,
                ))
            }
            p => Err(Error::Config(format!("policy `{p}` decides after inference"))),
        }
    }

    /// Routes one request end to end.
    pub fn route(
        &self,
        task: &FimTask,
        local: &dyn Backend,
        remote: &dyn Backend,
        gate: &SyntaxGate,
    ) -> Result<RouteDecision> {
        let policy = self.config.policy;
        if policy.uses_gate() && !gate.registry().supports(&task.language) {
            return Err(Error::Config(format!(
                "no syntax checker registered for language `{}` (registry: {})",
                task.language,
                gate.registry().languages().join(", ")
            )));
        }
        if policy.is_post_inference() {
            self.route_post_inference(task, local, remote, gate)
        } else {
            let choose_local = self.pre_inference_choice(task)?;
            self.route_pre_inference(task, choose_local, local, remote)
        }
    }

    fn params(&self) -> &GenerationParams {
        &self.config.generation
    }

    fn route_post_inference(
        &self,
        task: &FimTask,
        local: &dyn Backend,
        remote: &dyn Backend,
        gate: &SyntaxGate,
    ) -> Result<RouteDecision> {
        let t0 = Instant::now();
        let local_result = local.generate(task, self.params());
        let latency_local = t0.elapsed().as_secs_f64();
        let completion = match local_result {
            Ok(c) => c,
            Err(err) => {
                tracing::warn!(task = %task.id, error = %err, "local backend failed; escalating");
                let (final_completion, latency_remote) = timed(|| remote.generate(task, self.params()));
                return Ok(RouteDecision {
                    kept_local: false,
                    reason: RouteReason::LocalUnavailable,
                    confidence: None,
                    syntax_verdict: None,
                    final_completion: final_completion?,
                    latency_local,
                    latency_remote,
                    latency_gate: 0.0,
                });
            }
        };

        let confidence = self.config.confidence_metric.score(&completion)?.value;
        let degenerate = self.config.policy == Policy::Cascade && is_degenerate(&completion.text, &task.prefix);
        let mut verdict_slot: Option<SyntaxVerdict> = None;
        let mut latency_gate = 0.0;
        let verdict = decide(self.config.policy, &self.config.thresholds(), confidence, degenerate, || {
            let g0 = Instant::now();
            let v = gate.gate(task, &completion.text)?;
            latency_gate = g0.elapsed().as_secs_f64();
            let status = v.status;
            verdict_slot = Some(v);
            Ok(status)
        })?;

        let mut decision = RouteDecision {
            kept_local: verdict.kept_local,
            reason: verdict.reason,
            confidence: Some(confidence),
            syntax_verdict: verdict_slot,
            final_completion: Completion::default(),
            latency_local,
            latency_remote: 0.0,
            latency_gate,
        };
        if verdict.kept_local {
            decision.final_completion = completion;
            return Ok(decision);
        }
        let (remote_result, latency_remote) = timed(|| remote.generate(task, self.params()));
        decision.latency_remote = latency_remote;
        match remote_result {
            Ok(c) => decision.final_completion = c,
            Err(err) if self.config.serve_local_on_remote_failure => {
                tracing::warn!(task = %task.id, error = %err, "remote backend failed; serving local completion");
                decision.kept_local = true;
                decision.reason = RouteReason::RemoteUnavailable;
                decision.final_completion = completion;
            }
            Err(err) => return Err(err),
        }
        Ok(decision)
    }

    fn route_pre_inference(
        &self,
        task: &FimTask,
        choose_local: bool,
        local: &dyn Backend,
        remote: &dyn Backend,
    ) -> Result<RouteDecision> {
        let mut decision = RouteDecision {
            kept_local: choose_local,
            reason: RouteReason::PolicyPreInference,
            confidence: None,
            syntax_verdict: None,
            final_completion: Completion::default(),
            latency_local: 0.0,
            latency_remote: 0.0,
            latency_gate: 0.0,
        };
        if choose_local {
            let (result, latency) = timed(|| local.generate(task, self.params()));
            decision.latency_local = latency;
            match result {
                Ok(c) => decision.final_completion = c,
                Err(err) if self.config.policy.can_escalate() => {
                    tracing::warn!(task = %task.id, error = %err, "local backend failed; escalating");
                    let (result, latency) = timed(|| remote.generate(task, self.params()));
                    decision.latency_remote = latency;
                    decision.final_completion = result?;
                    decision.kept_local = false;
                    decision.reason = RouteReason::LocalUnavailable;
                }
                Err(err) => return Err(err),
            }
        } else {
            let (result, latency) = timed(|| remote.generate(task, self.params()));
            decision.latency_remote = latency;
            match result {
                Ok(c) => decision.final_completion = c,
                Err(err) if self.config.serve_local_on_remote_failure && self.config.policy.uses_local() => {
                    tracing::warn!(task = %task.id, error = %err, "remote backend failed; serving local completion");
                    let (result, latency) = timed(|| local.generate(task, self.params()));
                    decision.latency_local = latency;
                    decision.final_completion = result?;
                    decision.kept_local = true;
                    decision.reason = RouteReason::RemoteUnavailable;
                }
                Err(err) => return Err(err),
            }
        }
        Ok(decision)
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64())
}
