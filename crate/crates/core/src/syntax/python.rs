use std::time::Instant;

use rustpython_parser::{parse, Mode};

use super::{CheckerKind, SyntaxChecker, SyntaxVerdict, DEFAULT_EMBEDDED_TIMEOUT_SECS};

/// Module-level parse with an embedded CPython-compatible grammar.
#[derive(Debug, Default)]
pub struct PythonChecker;

impl PythonChecker {
    pub fn new() -> Self {
        PythonChecker
    }
}

impl SyntaxChecker for PythonChecker {
    fn id(&self) -> &str {
        "python/rustpython-parser"
    }

    fn kind(&self) -> CheckerKind {
        CheckerKind::EmbeddedGrammar
    }

    fn timeout(&self) -> f64 {
        DEFAULT_EMBEDDED_TIMEOUT_SECS
    }

    fn check(&self, source: &str) -> SyntaxVerdict {
        let started = Instant::now();
        let error = parse(source, Mode::Module, "<completion>")
            .err()
            .map(|e| e.to_string());
        SyntaxVerdict::from_parse(self.id(), started, error)
    }
}
