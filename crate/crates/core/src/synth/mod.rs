//! Seeded generation of executable FIM tasks, syntax-breaking mutations and
//! whole synthetic replay artifacts (tasks plus two models' predictions).

mod program;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{ConfidenceDist, SubtypeProbs, SyntheticBackend, SyntheticModelSpec};
use crate::error::Result;
use crate::model::{FimTask, Language, PredictionRecord, Subtype, TestSuite};
use crate::postprocess::{postprocess, repair_indentation};

/// FNV-1a over the seed bytes followed by `key`; stable across platforms and releases.
pub fn stable_hash(seed: u64, key: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Mask the function's final `return` line.
    ReturnLine,
    /// Mask any line that a completion could legitimately fill.
    AnyLine,
}

const TEST_INPUTS: usize = 4;

/// Generates `n` tasks with canonical solutions. Python and C++ tasks carry
/// unit tests; Java tasks do not (no JVM is assumed at evaluation time).
pub fn generate_tasks(language: &Language, n: usize, seed: u64, mask: MaskPolicy) -> Vec<FimTask> {
    (0..n)
        .map(|i| generate_task(language, i, seed, mask))
        .collect()
}

fn generate_task(language: &Language, index: usize, seed: u64, mask: MaskPolicy) -> FimTask {
    let id = format!("{}-{index:05}", language.as_str());
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &id));
    let name = format!("compute_{index}");
    let function = program::random_function(&mut rng, name.clone());
    let lines = function.render(language, &format!("Task{index}"));

    let split = |idx: usize| {
        let mut prefix: String = lines[..idx]
            .iter()
            .map(|l| l.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        if idx > 0 {
            prefix.push('\n');
        }
        let mut suffix = String::from("\n");
        for line in &lines[idx + 1..] {
            suffix.push_str(&line.text);
            suffix.push('\n');
        }
        (prefix, lines[idx].text.clone(), suffix)
    };
    let eligible: Vec<usize> = (0..lines.len())
        .filter(|&i| lines[i].maskable)
        .filter(|&i| mask == MaskPolicy::AnyLine || lines[i].is_return)
        .filter(|&i| {
            let (prefix, truth, _) = split(i);
            let probe = FimTask::new("", language.clone(), prefix, "");
            repair_indentation(&truth, &probe) == truth
        })
        .collect();
    let idx = eligible[rng.random_range(0..eligible.len())];
    let (prefix, truth, suffix) = split(idx);

    let trimmed = truth.trim_start();
    let subtype = if ["if", "for", "else", "}"].iter().any(|kw| trimmed.starts_with(kw)) {
        Subtype::Control
    } else {
        Subtype::SingleLine
    };

    let cases: Vec<(i64, i64, i64)> = (0..TEST_INPUTS)
        .map(|_| {
            let a = rng.random_range(-5..12);
            let b = rng.random_range(-5..12);
            (a, b, function.eval(a, b))
        })
        .collect();
    let tests = match language {
        Language::Python => {
            let mut code = String::from("def check(candidate):\n");
            for (a, b, want) in &cases {
                code.push_str(&format!("    assert candidate({a}, {b}) == {want}\n"));
            }
            Some(TestSuite::new(name, code))
        }
        Language::Cpp => {
            let mut code = String::from("int main() {\n");
            for (a, b, want) in &cases {
                code.push_str(&format!("    if ({name}({a}, {b}) != {want}LL) return 1;\n"));
            }
            code.push_str("    return 0;\n}\n");
            Some(TestSuite::new(name, code))
        }
        _ => None,
    };

    FimTask {
        id,
        language: language.clone(),
        prefix,
        suffix,
        subtype: Some(subtype),
        tests,
        ground_truth: Some(truth),
    }
}

/// Byte offsets of code positions, i.e. outside string/char literals and comments.
fn code_positions(src: &str, language: &Language) -> Vec<(usize, char)> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    let mut quote: Option<char> = None;
    while let Some((i, c)) = chars.next() {
        if let Some(q) = quote {
            if c == '\\' {
                chars.next();
            } else if c == q || c == '\n' {
                quote = None;
            }
            continue;
        }
        let line_comment = match language {
            Language::Python => c == '#',
            _ => c == '/' && chars.peek().map(|&(_, n)| n) == Some('/'),
        };
        if line_comment {
            for (_, n) in chars.by_ref() {
                if n == '\n' {
                    break;
                }
            }
            continue;
        }
        if c == '"' || c == '\'' {
            quote = Some(c);
            continue;
        }
        out.push((i, c));
    }
    out
}

/// Closing delimiters at code positions.
pub fn closing_delimiters(src: &str, language: &Language) -> Vec<usize> {
    code_positions(src, language)
        .into_iter()
        .filter(|(_, c)| matches!(c, ')' | ']' | '}'))
        .map(|(i, _)| i)
        .collect()
}

pub fn delete_delimiter_at(src: &str, offset: usize) -> String {
    let mut out = src.to_owned();
    out.remove(offset);
    out
}

pub fn insert_delimiter_at(src: &str, offset: usize, delimiter: char) -> String {
    let mut out = src.to_owned();
    out.insert(offset, delimiter);
    out
}

/// Makes `text` unbalanced: deletes one closing delimiter when there is one
/// (half the time) and otherwise inserts a stray closer at a code position.
/// Spliced into a balanced program, the result can never parse.
pub fn break_syntax<R: Rng>(text: &str, rng: &mut R) -> String {
    // Generated and recorded completions contain no comments, so python rules suffice.
    let closers = closing_delimiters(text, &Language::Python);
    if !closers.is_empty() && rng.random_bool(0.5) {
        return delete_delimiter_at(text, closers[rng.random_range(0..closers.len())]);
    }
    let mut sites: Vec<usize> = code_positions(text, &Language::Python)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    sites.push(text.len());
    let at = sites[rng.random_range(0..sites.len())];
    let delimiter = [')', ']', '}'][rng.random_range(0..3)];
    insert_delimiter_at(text, at, delimiter)
}

/// A syntactically valid but semantically different completion: the last
/// integer literal is incremented. Text without a literal gets a no-op statement.
pub fn perturb_semantics<R: Rng>(text: &str, language: &Language, _rng: &mut R) -> String {
    let positions = code_positions(text, language);
    let bytes = text.as_bytes();
    let mut last: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < positions.len() {
        let (start, c) = positions[i];
        let prev_ident = start > 0 && {
            let p = bytes[start - 1];
            p.is_ascii_alphanumeric() || p == b'_'
        };
        if c.is_ascii_digit() && !prev_ident {
            let mut end = start + 1;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            last = Some((start, end));
            while i < positions.len() && positions[i].0 < end {
                i += 1;
            }
            continue;
        }
        i += 1;
    }
    match last {
        Some((start, end)) => {
            let value: u64 = text[start..end].parse().unwrap_or(0);
            format!("{}{}{}", &text[..start], value + 1, &text[end..])
        }
        None => {
            let indent: String = text.chars().take_while(|c| c.is_whitespace()).collect();
            match language {
                Language::Python => format!("{indent}pass"),
                _ => format!("{indent};"),
            }
        }
    }
}

/// Parameters for [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tasks: usize,
    #[serde(default = "default_language")]
    pub language: Language,
    pub seed: u64,
    #[serde(default = "default_mask")]
    pub mask: MaskPolicy,
    pub local: SyntheticModelSpec,
    pub remote: SyntheticModelSpec,
}

fn default_language() -> Language {
    Language::Python
}

fn default_mask() -> MaskPolicy {
    MaskPolicy::ReturnLine
}

impl SynthConfig {
    /// Small local / large remote pair at 63.3% and 71.5% correctness, with
    /// 46% of wrong local outputs syntax-broken.
    pub fn reference_rates(n_tasks: usize, seed: u64) -> Self {
        SynthConfig {
            n_tasks,
            language: Language::Python,
            seed,
            mask: MaskPolicy::ReturnLine,
            local: SyntheticModelSpec {
                model_id: "local-3b".into(),
                correct_prob: SubtypeProbs::constant(0.633),
                confidence_given_correct: ConfidenceDist::Beta { alpha: 6.0, beta: 1.5 },
                confidence_given_wrong: ConfidenceDist::Beta { alpha: 2.5, beta: 2.0 },
                syntax_break_prob_given_wrong: 0.46,
                seed: seed.wrapping_add(1),
            },
            remote: SyntheticModelSpec {
                model_id: "remote-480b".into(),
                correct_prob: SubtypeProbs::constant(0.715),
                confidence_given_correct: ConfidenceDist::Beta { alpha: 6.0, beta: 1.5 },
                confidence_given_wrong: ConfidenceDist::Beta { alpha: 2.5, beta: 2.0 },
                syntax_break_prob_given_wrong: 0.2,
                seed: seed.wrapping_add(2),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthArtifacts {
    pub tasks: Vec<FimTask>,
    pub predictions: Vec<PredictionRecord>,
}

/// Builds a dataset and both models' prediction records. `passed` is set from
/// the generator's own outcome (ground truth passes, every mutation fails);
/// `syntax_valid` is left for the gate to compute.
pub fn synthesize(config: &SynthConfig) -> Result<SynthArtifacts> {
    let tasks = generate_tasks(&config.language, config.n_tasks, config.seed, config.mask);
    let mut predictions = Vec::with_capacity(tasks.len() * 2);
    for spec in [&config.local, &config.remote] {
        let backend = SyntheticBackend::new(spec.clone())?;
        for task in &tasks {
            let draw = backend.draw(task, crate::backend::GenerationParams::default().max_tokens)?;
            predictions.push(PredictionRecord {
                task_id: task.id.clone(),
                model_id: spec.model_id.clone(),
                text: Some(postprocess(&draw.text, task)),
                raw_text: draw.text,
                tokens: draw.tokens,
                latency: None,
                passed: Some(draw.outcome == crate::backend::SyntheticOutcome::Correct),
                syntax_valid: None,
            });
        }
    }
    Ok(SynthArtifacts { tasks, predictions })
}
