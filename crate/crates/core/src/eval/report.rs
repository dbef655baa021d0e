//! Aggregate reports and the routing analyses over outcome tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::RouteReason;
use crate::records::OutcomeRecord;
use crate::routers::Policy;
use crate::syntax::SyntaxStatus;

/// Exact count ratio; serialized with a rounded percentage alongside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RatioRepr", into = "RatioRepr")]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

#[derive(Serialize, Deserialize)]
struct RatioRepr {
    num: usize,
    den: usize,
    #[serde(default)]
    percent: f64,
}

impl From<RatioRepr> for Ratio {
    fn from(r: RatioRepr) -> Self {
        Ratio { num: r.num, den: r.den }
    }
}

impl From<Ratio> for RatioRepr {
    fn from(r: Ratio) -> Self {
        RatioRepr {
            num: r.num,
            den: r.den,
            percent: (r.value() * 10_000.0).round() / 100.0,
        }
    }
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        Ratio { num, den }
    }

    /// 0 when the denominator is 0.
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    pub fn percent(self) -> f64 {
        100.0 * self.value()
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}% ({}/{})", self.percent(), self.num, self.den)
    }
}

/// One routed task as seen by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDecision {
    pub task_id: String,
    pub kept_local: bool,
    pub reason: RouteReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syntax: Option<SyntaxStatus>,
    pub model_id: String,
    pub passed: bool,
    /// Backend failure that left the task without a completion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_tasks: usize,
    pub n_passed: usize,
    pub n_local: usize,
    pub n_escalated: usize,
    pub n_checker_error: usize,
    pub n_backend_errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complementarity {
    pub only_local: Ratio,
    pub only_remote: Ratio,
    pub both: Ratio,
    pub neither: Ratio,
    /// Same partition restricted to tasks at least one model solves.
    pub only_local_of_solvable: Ratio,
    pub only_remote_of_solvable: Ratio,
    pub both_of_solvable: Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureDecomposition {
    pub threshold: f64,
    /// Confidence at or above the threshold.
    pub confident: usize,
    pub confident_wrong_total: usize,
    pub syntactically_invalid: usize,
    pub semantically_wrong: usize,
    /// Confident-wrong tasks whose checker failed.
    pub checker_error: usize,
    pub confident_correct: usize,
    /// Confident-correct tasks the gate did not pass as valid.
    pub false_positives: usize,
}

impl FailureDecomposition {
    pub fn invalid_fraction(&self) -> Ratio {
        Ratio::new(self.syntactically_invalid, self.confident_wrong_total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub counts: Counts,
    pub pass1: Ratio,
    pub local_rate: Ratio,
    /// Fraction escalated.
    pub cost: Ratio,
    /// Equal to the local rate.
    pub privacy: Ratio,
    /// Route reason name to count.
    pub reasons: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Ratio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complementarity: Option<Complementarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_decomp: Option<FailureDecomposition>,
}

impl EvalReport {
    /// Order-independent reduction over per-task decisions.
    pub fn aggregate(strategy: impl Into<String>, policy: Policy, threshold: Option<f64>, decisions: &[TaskDecision]) -> EvalReport {
        let n = decisions.len();
        let mut counts = Counts {
            n_tasks: n,
            n_passed: 0,
            n_local: 0,
            n_escalated: 0,
            n_checker_error: 0,
            n_backend_errors: 0,
        };
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        for d in decisions {
            counts.n_passed += d.passed as usize;
            counts.n_backend_errors += d.error.is_some() as usize;
            counts.n_checker_error += (d.syntax == Some(SyntaxStatus::CheckerError)) as usize;
            if d.error.is_some() {
                continue;
            }
            if d.kept_local {
                counts.n_local += 1;
            } else {
                counts.n_escalated += 1;
            }
            *reasons.entry(d.reason.as_str().to_owned()).or_default() += 1;
        }
        EvalReport {
            strategy: strategy.into(),
            policy,
            threshold,
            pass1: Ratio::new(counts.n_passed, n),
            local_rate: Ratio::new(counts.n_local, n),
            cost: Ratio::new(n - counts.n_local, n),
            privacy: Ratio::new(counts.n_local, n),
            counts,
            reasons,
            oracle: None,
            complementarity: None,
            failure_decomp: None,
        }
    }

    /// Attaches the oracle, complementarity and failure decomposition.
    pub fn with_analysis(mut self, records: &[OutcomeRecord], threshold: f64) -> EvalReport {
        self.oracle = Some(oracle_bound(records));
        self.complementarity = Some(complementarity(records));
        self.failure_decomp = Some(failure_decomposition(records, threshold));
        self
    }
}

/// Fraction of tasks at least one model passes.
pub fn oracle_bound(records: &[OutcomeRecord]) -> Ratio {
    Ratio::new(
        records.iter().filter(|r| r.local_passed || r.remote_passed).count(),
        records.len(),
    )
}

pub fn complementarity(records: &[OutcomeRecord]) -> Complementarity {
    let n = records.len();
    let count = |l: bool, r: bool| {
        records
            .iter()
            .filter(|x| x.local_passed == l && x.remote_passed == r)
            .count()
    };
    let (ol, or, both, neither) = (count(true, false), count(false, true), count(true, true), count(false, false));
    let solvable = n - neither;
    Complementarity {
        only_local: Ratio::new(ol, n),
        only_remote: Ratio::new(or, n),
        both: Ratio::new(both, n),
        neither: Ratio::new(neither, n),
        only_local_of_solvable: Ratio::new(ol, solvable),
        only_remote_of_solvable: Ratio::new(or, solvable),
        both_of_solvable: Ratio::new(both, solvable),
    }
}

pub fn failure_decomposition(records: &[OutcomeRecord], threshold: f64) -> FailureDecomposition {
    let mut d = FailureDecomposition {
        threshold,
        confident: 0,
        confident_wrong_total: 0,
        syntactically_invalid: 0,
        semantically_wrong: 0,
        checker_error: 0,
        confident_correct: 0,
        false_positives: 0,
    };
    for r in records.iter().filter(|r| r.confidence >= threshold) {
        d.confident += 1;
        if r.local_passed {
            d.confident_correct += 1;
            d.false_positives += (r.syntax != SyntaxStatus::Valid) as usize;
            continue;
        }
        d.confident_wrong_total += 1;
        match r.syntax {
            SyntaxStatus::Valid => d.semantically_wrong += 1,
            SyntaxStatus::Invalid => d.syntactically_invalid += 1,
            SyntaxStatus::CheckerError => d.checker_error += 1,
        }
    }
    d
}

const ORACLE_LABEL: &str = "Oracle (upper bound)";

/// Aligned text table: Strategy, pass@1, Cost, Private.
pub fn render_table(reports: &[EvalReport]) -> String {
    let label = |r: &EvalReport| match r.threshold {
        Some(t) => format!("{} (t={t:.2})", r.strategy),
        None => r.strategy.clone(),
    };
    let oracle = reports.iter().find_map(|r| r.oracle);
    let width = reports
        .iter()
        .map(|r| label(r).len())
        .chain(["Strategy".len()])
        .chain(oracle.map(|_| ORACLE_LABEL.len()))
        .max()
        .unwrap_or(8);
    let mut out = format!("{:<width$}  {:>7}  {:>6}  {:>7}  {:>6}\n", "Strategy", "pass@1", "Cost", "Private", "n");
    out.push_str(&format!("{}\n", "-".repeat(width + 36)));
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>6.1}%  {:>5.1}%  {:>6.1}%  {:>6}\n",
            label(r),
            r.pass1.percent(),
            r.cost.percent(),
            r.privacy.percent(),
            r.counts.n_tasks
        ));
    }
    if let Some(oracle) = oracle {
        out.push_str(&format!("{:<width$}  {:>6.1}%  {:>6}  {:>7}  {:>6}\n", ORACLE_LABEL, oracle.percent(), "-", "-", oracle.den));
    }
    out
}
