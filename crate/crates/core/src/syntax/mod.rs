//! Syntax gate: splice a completion into its context and ask a per-language
//! checker whether the whole unit parses.

mod external;
mod java;
mod python;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FimTask, Language};

pub use external::ExternalChecker;
pub use java::JavaChecker;
pub use python::PythonChecker;

pub const DEFAULT_EMBEDDED_TIMEOUT_SECS: f64 = 0.5;
pub const DEFAULT_CPP_TIMEOUT_SECS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntaxStatus {
    Valid,
    Invalid,
    CheckerError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntaxVerdict {
    pub status: SyntaxStatus,
    pub checker_id: String,
    /// Seconds spent in the checker.
    pub latency: f64,
    /// First parser message; absent when valid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl SyntaxVerdict {
    pub fn is_valid(&self) -> bool {
        self.status == SyntaxStatus::Valid
    }

    /// Verdict taken from a recorded artifact flag rather than a checker run.
    pub fn recorded(status: SyntaxStatus) -> SyntaxVerdict {
        SyntaxVerdict {
            status,
            checker_id: "recorded".into(),
            latency: 0.0,
            diagnostic: None,
        }
    }

    pub(crate) fn from_parse(
        checker_id: &str,
        started: Instant,
        error: Option<String>,
    ) -> SyntaxVerdict {
        SyntaxVerdict {
            status: if error.is_some() {
                SyntaxStatus::Invalid
            } else {
                SyntaxStatus::Valid
            },
            checker_id: checker_id.to_owned(),
            latency: started.elapsed().as_secs_f64(),
            diagnostic: error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckerKind {
    EmbeddedGrammar,
    ExternalProcess,
}

pub trait SyntaxChecker: Send + Sync {
    fn id(&self) -> &str;
    fn kind(&self) -> CheckerKind;
    fn timeout(&self) -> f64;
    /// Whole-unit parse of `source`. Never fails; checker faults become
    /// [`SyntaxStatus::CheckerError`].
    fn check(&self, source: &str) -> SyntaxVerdict;
}

/// Serializable description of one registry entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckerSpec {
    Embedded,
    External {
        /// Program and arguments; `{file}` is replaced by the source path.
        command: Vec<String>,
        #[serde(default = "default_external_timeout")]
        timeout: f64,
        /// File extension for the temporary source file.
        #[serde(default = "default_extension")]
        extension: String,
    },
}

fn default_external_timeout() -> f64 {
    DEFAULT_CPP_TIMEOUT_SECS
}

fn default_extension() -> String {
    "cpp".to_owned()
}

/// One checker per language.
#[derive(Clone, Default)]
pub struct CheckerRegistry {
    checkers: HashMap<Language, Arc<dyn SyntaxChecker>>,
}

impl std::fmt::Debug for CheckerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut langs: Vec<_> = self.checkers.keys().map(|l| l.as_str()).collect();
        langs.sort_unstable();
        f.debug_struct("CheckerRegistry")
            .field("languages", &langs)
            .finish()
    }
}

impl CheckerRegistry {
    pub fn empty() -> Self {
        CheckerRegistry::default()
    }

    /// Python and Java via embedded grammars, C++ via `g++ -fsyntax-only`.
    pub fn with_defaults() -> Self {
        let mut registry = CheckerRegistry::empty();
        registry.register(Language::Python, Arc::new(PythonChecker::new()));
        registry.register(Language::Java, Arc::new(JavaChecker::new()));
        registry.register(Language::Cpp, Arc::new(ExternalChecker::gxx()));
        registry
    }

    pub fn from_specs<'a>(specs: impl IntoIterator<Item = (&'a str, &'a CheckerSpec)>) -> Result<Self> {
        let mut registry = CheckerRegistry::with_defaults();
        for (lang, spec) in specs {
            let language = Language::from(lang.to_owned());
            let checker: Arc<dyn SyntaxChecker> = match spec {
                CheckerSpec::Embedded => match language {
                    Language::Python => Arc::new(PythonChecker::new()),
                    Language::Java => Arc::new(JavaChecker::new()),
                    _ => {
                        return Err(Error::Config(format!(
                            "no embedded grammar for language `{lang}`"
                        )))
                    }
                },
                CheckerSpec::External {
                    command,
                    timeout,
                    extension,
                } => Arc::new(ExternalChecker::new(
                    format!("external:{lang}"),
                    command.clone(),
                    extension.clone(),
                    *timeout,
                )?),
            };
            registry.register(language, checker);
        }
        Ok(registry)
    }

    /// Replaces any existing checker for `language`.
    pub fn register(&mut self, language: Language, checker: Arc<dyn SyntaxChecker>) {
        self.checkers.insert(language, checker);
    }

    pub fn get(&self, language: &Language) -> Option<&Arc<dyn SyntaxChecker>> {
        self.checkers.get(language)
    }

    pub fn supports(&self, language: &Language) -> bool {
        self.checkers.contains_key(language)
    }

    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.checkers.keys().map(|l| l.to_string()).collect();
        langs.sort();
        langs
    }
}

/// Byte-exact `prefix ∥ completion ∥ suffix`.
pub fn assemble(prefix: &str, completion: &str, suffix: &str) -> String {
    let mut out = String::with_capacity(prefix.len() + completion.len() + suffix.len());
    out.push_str(prefix);
    out.push_str(completion);
    out.push_str(suffix);
    out
}

pub fn check_syntax(
    registry: &CheckerRegistry,
    source: &str,
    language: &Language,
) -> Result<SyntaxVerdict> {
    let checker = registry.get(language).ok_or_else(|| {
        Error::Config(format!(
            "no syntax checker registered for language `{language}` (registry has: {})",
            registry.languages().join(", ")
        ))
    })?;
    Ok(checker.check(source))
}

/// Memoizing wrapper used by routers and the evaluation harness.
///
/// Verdicts are cached per `(task id, completion text)` for the lifetime of
/// the gate, so sweeping several routers over one run checks each completion
/// once.
pub struct SyntaxGate {
    registry: Arc<CheckerRegistry>,
    cache: Option<Mutex<HashMap<(String, String), SyntaxVerdict>>>,
    checks: AtomicUsize,
}

impl SyntaxGate {
    pub fn new(registry: Arc<CheckerRegistry>) -> Self {
        SyntaxGate {
            registry,
            cache: Some(Mutex::new(HashMap::new())),
            checks: AtomicUsize::new(0),
        }
    }

    /// No memoization; for long-running services where the key space is unbounded.
    pub fn uncached(registry: Arc<CheckerRegistry>) -> Self {
        SyntaxGate {
            cache: None,
            ..SyntaxGate::new(registry)
        }
    }

    pub fn registry(&self) -> &CheckerRegistry {
        &self.registry
    }

    /// Number of gate invocations (cache hits included).
    pub fn calls(&self) -> usize {
        self.checks.load(Ordering::Relaxed)
    }

    /// Seeds the cache with an externally computed verdict (e.g. a recorded artifact flag).
    pub fn preload(&self, task_id: &str, text: &str, verdict: SyntaxVerdict) {
        if let Some(cache) = &self.cache {
            cache
                .lock()
                .insert((task_id.to_owned(), text.to_owned()), verdict);
        }
    }

    pub fn gate(&self, task: &FimTask, completion_text: &str) -> Result<SyntaxVerdict> {
        self.checks.fetch_add(1, Ordering::Relaxed);
        let key = (task.id.clone(), completion_text.to_owned());
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().get(&key) {
                return Ok(hit.clone());
            }
        }
        let source = assemble(&task.prefix, completion_text, &task.suffix);
        let verdict = check_syntax(&self.registry, &source, &task.language)?;
        if let Some(cache) = &self.cache {
            cache.lock().insert(key, verdict.clone());
        }
        Ok(verdict)
    }
}
