//! Shared domain types and the line-delimited dataset / prediction artifacts.
//!
//! Both artifact kinds are JSON Lines: one record per line, UTF-8, `\n`
//! separated. Blank lines are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax::SyntaxVerdict;

/// Smallest calibration set accepted without an explicit override.
pub const MIN_CALIBRATION_TASKS: usize = 50;

pub const DEFAULT_TIME_LIMIT_SECS: f64 = 10.0;
pub const DEFAULT_MEMORY_LIMIT_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Language {
    Python,
    Java,
    Cpp,
    /// Loads fine; syntax-gated routing rejects it unless a checker is registered.
    Other(String),
}

impl Language {
    pub fn as_str(&self) -> &str {
        match self {
            Language::Python => "python",
            Language::Java => "java",
            Language::Cpp => "cpp",
            Language::Other(name) => name,
        }
    }

    /// Whether block structure is carried by indentation.
    pub fn is_indentation_sensitive(&self) -> bool {
        matches!(self, Language::Python)
    }
}

impl From<String> for Language {
    fn from(value: String) -> Self {
        match value.to_ascii_lowercase().as_str() {
            "python" | "py" | "python-like" | "python3" => Language::Python,
            "java" | "java-like" => Language::Java,
            "cpp" | "c++" | "cpp-like" | "cxx" => Language::Cpp,
            _ => Language::Other(value),
        }
    }
}

impl From<Language> for String {
    fn from(value: Language) -> Self {
        value.as_str().to_owned()
    }
}

impl FromStr for Language {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Language::from(s.to_owned()))
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subtype {
    #[serde(alias = "single_line")]
    SingleLine,
    Control,
    Block,
    Api,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSuite {
    pub entry_point: String,
    pub test_code: String,
    pub time_limit: f64,
    pub memory_limit: u64,
}

impl TestSuite {
    pub fn new(entry_point: impl Into<String>, test_code: impl Into<String>) -> Self {
        TestSuite {
            entry_point: entry_point.into(),
            test_code: test_code.into(),
            time_limit: DEFAULT_TIME_LIMIT_SECS,
            memory_limit: DEFAULT_MEMORY_LIMIT_BYTES,
        }
    }
}

/// A fill-in-the-middle request: complete the code between `prefix` and `suffix`.
#[derive(Debug, Clone, PartialEq)]
pub struct FimTask {
    pub id: String,
    pub language: Language,
    pub prefix: String,
    pub suffix: String,
    pub subtype: Option<Subtype>,
    pub tests: Option<TestSuite>,
    pub ground_truth: Option<String>,
}

impl FimTask {
    pub fn new(
        id: impl Into<String>,
        language: Language,
        prefix: impl Into<String>,
        suffix: impl Into<String>,
    ) -> Self {
        FimTask {
            id: id.into(),
            language,
            prefix: prefix.into(),
            suffix: suffix.into(),
            subtype: None,
            tests: None,
            ground_truth: None,
        }
    }
}

/// Wire form of a dataset line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskLine {
    id: String,
    language: Language,
    prefix: String,
    suffix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtype: Option<Subtype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entry_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tests: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    canonical: Option<String>,
}

impl From<TaskLine> for FimTask {
    fn from(line: TaskLine) -> Self {
        let tests = line
            .tests
            .map(|code| TestSuite::new(line.entry_point.clone().unwrap_or_default(), code));
        FimTask {
            id: line.id,
            language: line.language,
            prefix: line.prefix,
            suffix: line.suffix,
            subtype: line.subtype,
            tests,
            ground_truth: line.canonical,
        }
    }
}

impl From<&FimTask> for TaskLine {
    fn from(task: &FimTask) -> Self {
        TaskLine {
            id: task.id.clone(),
            language: task.language.clone(),
            prefix: task.prefix.clone(),
            suffix: task.suffix.clone(),
            subtype: task.subtype,
            entry_point: task.tests.as_ref().map(|t| t.entry_point.clone()),
            tests: task.tests.as_ref().map(|t| t.test_code.clone()),
            canonical: task.ground_truth.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    #[serde(rename = "t")]
    pub token_text: String,
    /// Natural-log probability, never positive.
    #[serde(rename = "lp")]
    pub logprob: f64,
}

impl TokenLogProb {
    pub fn new(token_text: impl Into<String>, logprob: f64) -> Self {
        TokenLogProb {
            token_text: token_text.into(),
            logprob,
        }
    }
}

/// Model output for one task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub raw_text: String,
    /// `raw_text` after extraction and indentation repair.
    pub text: String,
    pub tokens: Vec<TokenLogProb>,
    pub model_id: String,
    /// Wall-clock generation time in seconds.
    pub latency: f64,
}

/// One recorded model output, as stored in a predictions artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub task_id: String,
    pub model_id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub tokens: Vec<TokenLogProb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syntax_valid: Option<bool>,
}

impl PredictionRecord {
    /// Rebuilds the completion, post-processing `raw_text` when no text was recorded.
    pub fn completion(&self, task: &FimTask) -> Completion {
        let text = match &self.text {
            Some(text) => text.clone(),
            None => crate::postprocess::postprocess(&self.raw_text, task),
        };
        Completion {
            raw_text: self.raw_text.clone(),
            text,
            tokens: self.tokens.clone(),
            model_id: self.model_id.clone(),
            latency: self.latency.unwrap_or(0.0),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let last = self.tokens.len().saturating_sub(1);
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.logprob.is_nan() || tok.logprob > 0.0 {
                return Err(format!(
                    "token {i} of task `{}` has logprob {} > 0",
                    self.task_id, tok.logprob
                ));
            }
            if tok.token_text.is_empty() && i != last {
                return Err(format!("token {i} of task `{}` is empty", self.task_id));
            }
        }
        if let Some(latency) = self.latency {
            if !(latency >= 0.0) {
                return Err(format!("negative latency for task `{}`", self.task_id));
            }
        }
        Ok(())
    }
}

pub type PredictionKey = (String, String);

/// Recorded predictions keyed by `(task_id, model_id)`.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    records: BTreeMap<PredictionKey, PredictionRecord>,
}

impl PredictionSet {
    pub fn from_records(
        records: impl IntoIterator<Item = PredictionRecord>,
    ) -> Result<PredictionSet> {
        let mut set = PredictionSet::default();
        for record in records {
            record.validate().map_err(Error::Validation)?;
            set.insert(record)?;
        }
        Ok(set)
    }

    fn insert(&mut self, record: PredictionRecord) -> Result<()> {
        let key = (record.task_id.clone(), record.model_id.clone());
        if self.records.contains_key(&key) {
            return Err(Error::Validation(format!(
                "duplicate prediction for task `{}` and model `{}`",
                key.0, key.1
            )));
        }
        self.records.insert(key, record);
        Ok(())
    }

    pub fn get(&self, task_id: &str, model_id: &str) -> Option<&PredictionRecord> {
        self.records.get(&(task_id.to_owned(), model_id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.values()
    }

    /// Distinct model ids in sorted order.
    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.keys().map(|(_, m)| m.clone()).collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Records for one model, keyed by task id.
    pub fn for_model(&self, model_id: &str) -> HashMap<String, PredictionRecord> {
        self.records
            .values()
            .filter(|r| r.model_id == model_id)
            .map(|r| (r.task_id.clone(), r.clone()))
            .collect()
    }
}

/// Why a request ended up where it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteReason {
    ConfidentValid,
    LowConfidence,
    SyntaxInvalid,
    CheckerError,
    PolicyPreInference,
    /// Cascade borderline zone with an empty or prefix-copy completion.
    BorderlineDegenerate,
    /// Local generation failed; served by the remote model.
    LocalUnavailable,
    /// Remote generation failed after an escalation decision; local output served.
    RemoteUnavailable,
}

impl RouteReason {
    pub const ALL: [RouteReason; 8] = [
        RouteReason::ConfidentValid,
        RouteReason::LowConfidence,
        RouteReason::SyntaxInvalid,
        RouteReason::CheckerError,
        RouteReason::PolicyPreInference,
        RouteReason::BorderlineDegenerate,
        RouteReason::LocalUnavailable,
        RouteReason::RemoteUnavailable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RouteReason::ConfidentValid => "confident_valid",
            RouteReason::LowConfidence => "low_confidence",
            RouteReason::SyntaxInvalid => "syntax_invalid",
            RouteReason::CheckerError => "checker_error",
            RouteReason::PolicyPreInference => "policy_pre_inference",
            RouteReason::BorderlineDegenerate => "borderline_degenerate",
            RouteReason::LocalUnavailable => "local_unavailable",
            RouteReason::RemoteUnavailable => "remote_unavailable",
        }
    }
}

impl fmt::Display for RouteReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub kept_local: bool,
    pub reason: RouteReason,
    /// Absent for routers that decide before local inference.
    pub confidence: Option<f64>,
    pub syntax_verdict: Option<SyntaxVerdict>,
    /// The completion returned to the caller; from the local model iff `kept_local`.
    pub final_completion: Completion,
    pub latency_local: f64,
    pub latency_remote: f64,
    pub latency_gate: f64,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((idx + 1, line));
    }
    Ok(lines)
}

/// Loads a task dataset in file order, rejecting duplicate ids.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<FimTask>> {
    let path = path.as_ref();
    let mut tasks = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line_no, line) in read_lines(path)? {
        let record: TaskLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(first) = seen.insert(record.id.clone(), line_no) {
            return Err(Error::Validation(format!(
                "duplicate task id `{}` on lines {first} and {line_no}",
                record.id
            )));
        }
        tasks.push(FimTask::from(record));
    }
    Ok(tasks)
}

pub fn write_dataset(tasks: &[FimTask], mut out: impl Write) -> Result<()> {
    for task in tasks {
        let line = serde_json::to_string(&TaskLine::from(task))?;
        writeln!(out, "{line}").map_err(|e| Error::io("writing dataset", e))?;
    }
    Ok(())
}

/// Loads a predictions artifact. When `dataset` is given, every record must
/// reference one of its task ids.
pub fn load_predictions(
    path: impl AsRef<Path>,
    dataset: Option<&[FimTask]>,
) -> Result<PredictionSet> {
    let path = path.as_ref();
    let known: Option<HashSet<&str>> = dataset.map(|d| d.iter().map(|t| t.id.as_str()).collect());
    let mut set = PredictionSet::default();
    for (line_no, line) in read_lines(path)? {
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|msg| Error::Validation(format!("line {line_no}: {msg}")))?;
        if let Some(known) = &known {
            if !known.contains(record.task_id.as_str()) {
                return Err(Error::Validation(format!(
                    "line {line_no}: unknown task id `{}`",
                    record.task_id
                )));
            }
        }
        set.insert(record).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("line {line_no}: {msg}")),
            other => other,
        })?;
    }
    Ok(set)
}

pub fn write_predictions<'a>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    mut out: impl Write,
) -> Result<()> {
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(out, "{line}").map_err(|e| Error::io("writing predictions", e))?;
    }
    Ok(())
}

/// Seeded split of `0..len` into calibration and test index sets.
///
/// The permutation is a Fisher-Yates shuffle (`rand::seq::SliceRandom`) driven
/// by `ChaCha8Rng::seed_from_u64(seed)`; the first `n` shuffled indices form
/// the calibration set. Both sets are returned in ascending index order.
pub fn split_indices(len: usize, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n > len {
        return Err(Error::Argument(format!(
            "calibration size {n} exceeds dataset size {len}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut calibration = order[..n].to_vec();
    let mut test = order[n..].to_vec();
    calibration.sort_unstable();
    test.sort_unstable();
    Ok((calibration, test))
}

/// Splits `items` into `(calibration, test)`, requiring at least
/// [`MIN_CALIBRATION_TASKS`] calibration items.
pub fn split_calibration<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    split_calibration_with_min(items, n, seed, MIN_CALIBRATION_TASKS)
}

pub fn split_calibration_with_min<T: Clone>(
    items: &[T],
    n: usize,
    seed: u64,
    min: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    if n < min {
        return Err(Error::Argument(format!(
            "calibration size {n} is below the minimum of {min}"
        )));
    }
    let (cal, test) = split_indices(items.len(), n, seed)?;
    Ok((
        cal.into_iter().map(|i| items[i].clone()).collect(),
        test.into_iter().map(|i| items[i].clone()).collect(),
    ))
}
