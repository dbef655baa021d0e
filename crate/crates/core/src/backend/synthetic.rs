use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{content_key, Backend, GenerationParams};
use crate::error::{Error, Result};
use crate::model::{Completion, FimTask, Subtype, TokenLogProb};
use crate::postprocess::postprocess;
use crate::synth::{break_syntax, perturb_semantics, stable_hash};

/// Distribution a synthetic confidence is drawn from; support is `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ConfidenceDist {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl ConfidenceDist {
    fn validate(&self) -> std::result::Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        match *self {
            ConfidenceDist::Fixed { value } if unit(value) => Ok(()),
            ConfidenceDist::Uniform { low, high } if unit(low) && unit(high) && low <= high => Ok(()),
            ConfidenceDist::Beta { alpha, beta } if alpha > 0.0 && beta > 0.0 => Ok(()),
            other => Err(format!("invalid confidence distribution {other:?}")),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ConfidenceDist::Fixed { value } => value,
            ConfidenceDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            ConfidenceDist::Beta { alpha, beta } => Beta::new(alpha, beta)
                .expect("validated parameters")
                .sample(rng),
        }
    }
}

/// Probability of producing the correct completion, optionally per subtype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeProbs {
    pub default: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_subtype: BTreeMap<Subtype, f64>,
}

impl SubtypeProbs {
    pub fn constant(p: f64) -> Self {
        SubtypeProbs {
            default: p,
            per_subtype: BTreeMap::new(),
        }
    }

    pub fn get(&self, subtype: Option<Subtype>) -> f64 {
        subtype
            .and_then(|s| self.per_subtype.get(&s).copied())
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub model_id: String,
    pub correct_prob: SubtypeProbs,
    pub confidence_given_correct: ConfidenceDist,
    pub confidence_given_wrong: ConfidenceDist,
    pub syntax_break_prob_given_wrong: f64,
    pub seed: u64,
}

impl SyntheticModelSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.correct_prob.default) || !self.correct_prob.per_subtype.values().all(|&p| unit(p)) {
            return Err(Error::Validation(format!(
                "{}: correct_prob outside [0, 1]",
                self.model_id
            )));
        }
        if !unit(self.syntax_break_prob_given_wrong) {
            return Err(Error::Validation(format!(
                "{}: syntax_break_prob_given_wrong outside [0, 1]",
                self.model_id
            )));
        }
        self.confidence_given_correct
            .validate()
            .and_then(|_| self.confidence_given_wrong.validate())
            .map_err(|m| Error::Validation(format!("{}: {m}", self.model_id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticOutcome {
    Correct,
    WrongValid,
    WrongBroken,
}

/// Deterministic stand-in for a served model. Each task draws from its own
/// RNG stream keyed by `(seed, task id)`, so output does not depend on call
/// order or concurrency.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticModelSpec,
    known: HashMap<(String, String, String), FimTask>,
}

/// Everything the generator decided for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDraw {
    pub outcome: SyntheticOutcome,
    pub confidence: f64,
    pub text: String,
    pub tokens: Vec<TokenLogProb>,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(SyntheticBackend {
            spec,
            known: HashMap::new(),
        })
    }

    /// Registers tasks so id-less requests can be matched to their ground truth.
    pub fn with_tasks(mut self, tasks: &[FimTask]) -> Self {
        self.known
            .extend(tasks.iter().map(|t| (content_key(t), t.clone())));
        self
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    pub fn draw(&self, task: &FimTask, max_tokens: usize) -> Result<SyntheticDraw> {
        let truth = task
            .ground_truth
            .as_deref()
            .or_else(|| {
                self.known
                    .get(&content_key(task))
                    .and_then(|t| t.ground_truth.as_deref())
            })
            .ok_or_else(|| {
                Error::Config(format!(
                    "synthetic backend needs ground truth for task `{}`",
                    task.id
                ))
            })?;

        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(self.spec.seed, &task.id));
        let correct = rng.random::<f64>() < self.spec.correct_prob.get(task.subtype);
        let broken = rng.random::<f64>() < self.spec.syntax_break_prob_given_wrong;
        let (outcome, text) = if correct {
            (SyntheticOutcome::Correct, truth.to_owned())
        } else if broken {
            (SyntheticOutcome::WrongBroken, break_syntax(truth, &mut rng))
        } else {
            (
                SyntheticOutcome::WrongValid,
                perturb_semantics(truth, &task.language, &mut rng),
            )
        };
        let confidence = if correct {
            self.spec.confidence_given_correct.sample(&mut rng)
        } else {
            self.spec.confidence_given_wrong.sample(&mut rng)
        }
        .clamp(f64::MIN_POSITIVE, 1.0);

        let pieces = split_tokens(&text, max_tokens);
        let text: String = pieces.concat();
        let tokens = pieces
            .into_iter()
            .enumerate()
            .map(|(i, piece)| {
                let p = if i < 3 {
                    confidence
                } else {
                    confidence + (1.0 - confidence) * rng.random::<f64>()
                };
                TokenLogProb::new(piece, p.ln().min(0.0))
            })
            .collect();
        Ok(SyntheticDraw {
            outcome,
            confidence,
            text,
            tokens,
        })
    }
}

/// Whitespace-led word pieces, at most `max` of them.
fn split_tokens(text: &str, max: usize) -> Vec<String> {
    let mut pieces: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut seen_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() && seen_word {
            pieces.push(std::mem::take(&mut current));
            seen_word = false;
        }
        if !ch.is_whitespace() {
            seen_word = true;
        }
        current.push(ch);
    }
    if !current.is_empty() {
        if seen_word || pieces.is_empty() {
            pieces.push(current);
        } else if let Some(last) = pieces.last_mut() {
            last.push_str(&current);
        }
    }
    pieces.truncate(max);
    pieces
}

impl Backend for SyntheticBackend {
    fn model_id(&self) -> &str {
        &self.spec.model_id
    }

    fn generate(&self, task: &FimTask, params: &GenerationParams) -> Result<Completion> {
        let draw = self.draw(task, params.max_tokens)?;
        Ok(Completion {
            text: postprocess(&draw.text, task),
            raw_text: draw.text,
            tokens: if params.want_logprobs { draw.tokens } else { Vec::new() },
            model_id: self.spec.model_id.clone(),
            latency: 0.0,
        })
    }
}
