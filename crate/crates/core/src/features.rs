//! Pre-inference task features and the default offline text embedder.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{FimTask, Language};
use crate::postprocess::{expected_indent, DEFAULT_INDENT_UNIT};
use crate::synth::stable_hash;

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub nesting_depth: usize,
    /// Jaccard similarity of prefix and suffix identifier sets.
    pub identifier_overlap: f64,
}

impl StaticFeatures {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.prefix_len as f64,
            self.suffix_len as f64,
            self.nesting_depth as f64,
            self.identifier_overlap,
        ]
    }
}

fn identifier_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("static regex"))
}

/// Identifier tokens: maximal runs matching `[A-Za-z_][A-Za-z0-9_]*`.
pub fn identifiers(text: &str) -> HashSet<&str> {
    identifier_re().find_iter(text).map(|m| m.as_str()).collect()
}

/// Jaccard similarity; two empty sets score 0.
pub fn jaccard(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Block depth at the cursor. Python-like: expected indentation at the
/// cursor divided by the indent unit. Brace languages: open minus closed
/// braces in the prefix, floored at 0 (literals are not excluded).
pub fn nesting_depth(prefix: &str, language: &Language) -> usize {
    if language.is_indentation_sensitive() {
        let cursor_line = prefix.rsplit('\n').next().unwrap_or("");
        let at_cursor = if cursor_line.trim().is_empty() {
            expected_indent(prefix, language, DEFAULT_INDENT_UNIT)
        } else {
            cursor_line.len() - cursor_line.trim_start().len()
        };
        return at_cursor / DEFAULT_INDENT_UNIT;
    }
    let mut depth: i64 = 0;
    for c in prefix.chars() {
        match c {
            '{' => depth += 1,
            '}' => depth = (depth - 1).max(0),
            _ => {}
        }
    }
    depth as usize
}

pub fn extract_static_features(task: &FimTask) -> StaticFeatures {
    StaticFeatures {
        prefix_len: task.prefix.chars().count(),
        suffix_len: task.suffix.chars().count(),
        nesting_depth: nesting_depth(&task.prefix, &task.language),
        identifier_overlap: jaccard(&identifiers(&task.prefix), &identifiers(&task.suffix)),
    }
}

/// Text embedding used by KNN, combined and ELO-neighbourhood routers.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;

    fn embed_task(&self, task: &FimTask) -> Vec<f64> {
        self.embed(&format!("{}\n{}", task.prefix, task.suffix))
    }
}

fn code_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*|[0-9]+|[^\sA-Za-z0-9_]").expect("static regex"))
}

/// L2-normalized hashed term frequencies over code tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedTfEmbedder {
    pub dim: usize,
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        HashedTfEmbedder {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl Embedder for HashedTfEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in code_token_re().find_iter(text) {
            v[(stable_hash(0, tok.as_str()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}
