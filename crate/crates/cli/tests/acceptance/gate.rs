use std::sync::Arc;
use std::time::Instant;

use fimroute::model::Language;
use fimroute::synth::{closing_delimiters, delete_delimiter_at, generate_tasks, MaskPolicy};
use fimroute::syntax::{assemble, check_syntax, CheckerRegistry, SyntaxStatus, DEFAULT_CPP_TIMEOUT_SECS};

use crate::support::{percentile, Failures, Outcome};

const GOLDEN_PER_LANGUAGE: usize = 120;
const CPP_GOLDEN: usize = 100;
const MAX_SOURCE_BYTES: usize = 10 * 1024;
const EMBEDDED_P99_SECS: f64 = 0.010;
/// Allowance on top of the external budget for killing and reaping the checker.
const REAP_ALLOWANCE: f64 = 0.10;

fn canonical_sources(language: &Language, n: usize) -> Vec<String> {
    generate_tasks(language, n, 7, MaskPolicy::AnyLine)
        .iter()
        .map(|t| assemble(&t.prefix, t.ground_truth.as_deref().unwrap(), &t.suffix))
        .collect()
}

/// Concatenations of canonical programs, each just under the size cap.
fn large_sources(sources: &[String], count: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for src in sources.iter().cycle().take(sources.len() * 10) {
        if cur.len() + src.len() + 1 > MAX_SOURCE_BYTES {
            out.push(std::mem::take(&mut cur));
            if out.len() == count {
                break;
            }
        }
        cur.push_str(src);
        cur.push('\n');
    }
    out
}

/// Deletions of closing delimiters, spread over each source.
fn mutations(sources: &[String], language: &Language, per_source: usize) -> Vec<String> {
    let mut out = Vec::new();
    for src in sources {
        let positions = closing_delimiters(src, language);
        let step = (positions.len() / per_source).max(1);
        for &pos in positions.iter().step_by(step).take(per_source) {
            out.push(delete_delimiter_at(src, pos));
        }
    }
    out
}

/// Source whose constant evaluation keeps the compiler busy far past the budget.
const SLOW_CPP: &str = "template <int K>\nconstexpr long spin() {\n  long s = 0;\n  for (long i = 0; i < 100000; ++i)\n    for (long j = 0; j < 100000; ++j) s += (i ^ j ^ K) % 7;\n  return s;\n}\nstatic_assert(spin<0>() >= 0, \"\");\nstatic_assert(spin<1>() >= 0, \"\");\nstatic_assert(spin<2>() >= 0, \"\");\nstatic_assert(spin<3>() >= 0, \"\");\nstatic_assert(spin<4>() >= 0, \"\");\nstatic_assert(spin<5>() >= 0, \"\");\nstatic_assert(spin<6>() >= 0, \"\");\nstatic_assert(spin<7>() >= 0, \"\");\nint main() { return 0; }\n";

pub fn criterion() -> Outcome {
    let registry = Arc::new(CheckerRegistry::with_defaults());
    let mut fails = Failures::default();
    let mut notes = Vec::new();
    let mut embedded_latency = Vec::new();
    let mut golden_count = 0;
    let mut mutation_count = 0;

    for language in [Language::Python, Language::Java] {
        let golden = canonical_sources(&language, GOLDEN_PER_LANGUAGE);
        let large = large_sources(&golden, 20);
        let mutated = mutations(&golden, &language, 3);
        let large_mutated = mutations(&large, &language, 1);
        for (set, expect) in [
            (&golden, SyntaxStatus::Valid),
            (&large, SyntaxStatus::Valid),
            (&mutated, SyntaxStatus::Invalid),
            (&large_mutated, SyntaxStatus::Invalid),
        ] {
            for src in set {
                assert!(src.len() <= MAX_SOURCE_BYTES);
                let started = Instant::now();
                let verdict = check_syntax(&registry, src, &language).unwrap();
                embedded_latency.push(started.elapsed().as_secs_f64());
                if verdict.status != expect {
                    fails.push(format!("{language}: expected {expect:?}, got {:?}", verdict.status));
                }
            }
        }
        golden_count += golden.len() + large.len();
        mutation_count += mutated.len() + large_mutated.len();
        notes.push(format!(
            "{language}: {} golden ({} near 10 KB), {} mutations",
            golden.len() + large.len(),
            large.len(),
            mutated.len() + large_mutated.len()
        ));
    }

    let mut external_max: f64 = 0.0;
    let golden = canonical_sources(&Language::Cpp, CPP_GOLDEN);
    let mutated = mutations(&golden, &Language::Cpp, 1);
    for (set, expect) in [(&golden, SyntaxStatus::Valid), (&mutated, SyntaxStatus::Invalid)] {
        for src in set {
            let started = Instant::now();
            let verdict = check_syntax(&registry, src, &Language::Cpp).unwrap();
            external_max = external_max.max(started.elapsed().as_secs_f64());
            if verdict.status != expect {
                fails.push(format!("cpp: expected {expect:?}, got {:?} ({:?})", verdict.status, verdict.diagnostic));
            }
        }
    }
    golden_count += golden.len();
    mutation_count += mutated.len();
    notes.push(format!("cpp: {} golden, {} mutations", golden.len(), mutated.len()));

    let started = Instant::now();
    let slow = check_syntax(&registry, SLOW_CPP, &Language::Cpp).unwrap();
    let slow_secs = started.elapsed().as_secs_f64();
    external_max = external_max.max(slow_secs);
    if slow.status != SyntaxStatus::CheckerError {
        fails.push(format!("slow cpp source: expected a timeout, got {:?} ({:?})", slow.status, slow.diagnostic));
    }
    let budget = DEFAULT_CPP_TIMEOUT_SECS;
    if external_max > budget + REAP_ALLOWANCE {
        fails.push(format!("external checker took {external_max:.3}s, budget {budget}s"));
    }
    notes.push(format!("cpp timeout case returned {:?} after {slow_secs:.3}s", slow.status));

    let p99 = percentile(&mut embedded_latency, 0.99);
    if p99 >= EMBEDDED_P99_SECS {
        fails.push(format!("embedded checker p99 {:.2} ms", 1e3 * p99));
    }
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!(
                "{golden_count} golden sources all valid, {mutation_count} delimiter deletions all invalid; embedded p99 {:.2} ms; external max {external_max:.2}s (budget {budget}s)",
                1e3 * p99
            )
        } else {
            fails.summary()
        },
    )
    .with_notes(notes)
}
