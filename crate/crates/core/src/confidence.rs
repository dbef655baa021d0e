//! Confidence scores derived from per-token log-probabilities.
//!
//! Every metric is reported as a probability in `[0, 1]` (the exponentiated
//! mean log-probability, i.e. a geometric-mean token probability), so
//! thresholds such as 0.7 are directly meaningful. A completion without
//! tokens scores 0, which makes post-inference routers escalate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Completion, TokenLogProb};

/// Leading tokens averaged by the default metric.
pub const DEFAULT_FIRST_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMetric {
    #[default]
    FirstKMean,
    MinToken,
    AllMean,
}

impl ConfidenceMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceMetric::FirstKMean => "first_k_mean",
            ConfidenceMetric::MinToken => "min_token",
            ConfidenceMetric::AllMean => "all_mean",
        }
    }

    pub fn score(self, completion: &Completion) -> Result<Confidence> {
        match self {
            ConfidenceMetric::FirstKMean => score_first_k(completion, DEFAULT_FIRST_K),
            ConfidenceMetric::MinToken => score_min_token(completion),
            ConfidenceMetric::AllMean => score_all_mean(completion),
        }
    }
}

impl FromStr for ConfidenceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_k_mean" => Ok(ConfidenceMetric::FirstKMean),
            "min_token" => Ok(ConfidenceMetric::MinToken),
            "all_mean" => Ok(ConfidenceMetric::AllMean),
            other => Err(Error::Config(format!(
                "unknown confidence metric `{other}` (expected first_k_mean, min_token or all_mean)"
            ))),
        }
    }
}

impl fmt::Display for ConfidenceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub value: f64,
    pub metric: ConfidenceMetric,
    /// Number of tokens that contributed.
    pub k_used: usize,
}

fn check(tokens: &[TokenLogProb]) -> Result<()> {
    match tokens
        .iter()
        .position(|t| t.logprob.is_nan() || t.logprob > 0.0)
    {
        Some(i) => Err(Error::Validation(format!(
            "token {i} has logprob {} > 0",
            tokens[i].logprob
        ))),
        None => Ok(()),
    }
}

fn mean_prob(logprobs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = logprobs.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = logprobs.sum();
    (sum / n as f64).exp().clamp(0.0, 1.0)
}

/// Geometric-mean probability of the first `min(k, n)` tokens.
pub fn score_first_k(completion: &Completion, k: usize) -> Result<Confidence> {
    check(&completion.tokens)?;
    let used = k.min(completion.tokens.len());
    Ok(Confidence {
        value: mean_prob(completion.tokens[..used].iter().map(|t| t.logprob)),
        metric: ConfidenceMetric::FirstKMean,
        k_used: used,
    })
}

/// Probability of the least likely token.
pub fn score_min_token(completion: &Completion) -> Result<Confidence> {
    check(&completion.tokens)?;
    let value = completion
        .tokens
        .iter()
        .map(|t| t.logprob)
        .min_by(|a, b| a.total_cmp(b))
        .map_or(0.0, |lp| lp.exp().clamp(0.0, 1.0));
    Ok(Confidence {
        value,
        metric: ConfidenceMetric::MinToken,
        k_used: completion.tokens.len(),
    })
}

/// Geometric-mean probability over all tokens.
pub fn score_all_mean(completion: &Completion) -> Result<Confidence> {
    check(&completion.tokens)?;
    Ok(Confidence {
        value: mean_prob(completion.tokens.iter().map(|t| t.logprob)),
        metric: ConfidenceMetric::AllMean,
        k_used: completion.tokens.len(),
    })
}
