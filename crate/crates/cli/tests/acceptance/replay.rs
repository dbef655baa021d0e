use std::path::PathBuf;
use std::time::Instant;

use fimroute::eval::{failure_decomposition, oracle_bound, FailureDecomposition};
use fimroute::model::{split_indices, FimTask, Language, PredictionRecord, PredictionSet, TokenLogProb};
use fimroute::routers::Policy;
use fimroute_cli::commands::{load_inputs, DEFAULT_CALIBRATION_N, DEFAULT_SPLIT_SEED};
use fimroute_cli::settings::FileConfig;
use fimroute_cli::DataArgs;

use crate::support::{router_config, Fixture, Outcome};

/// Reference test-split figures, in percent.
struct Expected {
    always_local: f64,
    always_remote: f64,
    confidence_only: f64,
    confidence_only_private: f64,
    synconf: f64,
    synconf_private: f64,
    oracle: f64,
    confident_wrong: usize,
    invalid: usize,
    false_positives: usize,
}

const EXPECTED: Expected = Expected {
    always_local: 63.3,
    always_remote: 71.5,
    confidence_only: 72.5,
    confidence_only_private: 68.0,
    synconf: 78.9,
    synconf_private: 58.0,
    oracle: 85.2,
    confident_wrong: 166,
    invalid: 77,
    false_positives: 0,
};

const TOLERANCE_PP: f64 = 0.5;
const THRESHOLD: f64 = 0.7;

struct Measured {
    rows: Vec<(&'static str, f64, f64)>,
    decomp: FailureDecomposition,
    n: usize,
}

fn measure(fixture: &Fixture, test_idx: &[usize]) -> Measured {
    let test = fixture.subset(test_idx);
    let mut rows = Vec::new();
    for policy in [Policy::AlwaysLocal, Policy::AlwaysRemote, Policy::ConfidenceOnly, Policy::Synconf] {
        let (report, _) = test.evaluate(router_config(policy, THRESHOLD), None);
        rows.push((policy.as_str(), report.pass1.percent(), report.privacy.percent()));
    }
    rows.push(("oracle", oracle_bound(&test.records).percent(), f64::NAN));
    Measured {
        rows,
        decomp: failure_decomposition(&test.records, THRESHOLD),
        n: test.tasks.len(),
    }
}

fn compare(m: &Measured) -> Vec<String> {
    let want = [
        ("always_local", EXPECTED.always_local, f64::NAN),
        ("always_remote", EXPECTED.always_remote, f64::NAN),
        ("confidence_only", EXPECTED.confidence_only, EXPECTED.confidence_only_private),
        ("synconf", EXPECTED.synconf, EXPECTED.synconf_private),
        ("oracle", EXPECTED.oracle, f64::NAN),
    ];
    let mut misses = Vec::new();
    for ((name, pass1, private), (_, want_pass1, want_private)) in m.rows.iter().zip(want) {
        if (pass1 - want_pass1).abs() > TOLERANCE_PP {
            misses.push(format!("{name} pass@1 {pass1:.2}% vs {want_pass1}%"));
        }
        if !want_private.is_nan() && (private - want_private).abs() > TOLERANCE_PP {
            misses.push(format!("{name} private {private:.2}% vs {want_private}%"));
        }
    }
    let d = &m.decomp;
    if (d.confident_wrong_total, d.syntactically_invalid, d.false_positives)
        != (EXPECTED.confident_wrong, EXPECTED.invalid, EXPECTED.false_positives)
    {
        misses.push(format!(
            "decomposition {}/{}/{} vs {}/{}/{}",
            d.confident_wrong_total,
            d.syntactically_invalid,
            d.false_positives,
            EXPECTED.confident_wrong,
            EXPECTED.invalid,
            EXPECTED.false_positives
        ));
    }
    misses
}

fn describe(m: &Measured) -> String {
    let rows: Vec<String> = m.rows.iter().map(|(n, p, _)| format!("{n} {p:.1}%")).collect();
    format!(
        "n={} {}; decomposition {}/{}/{}",
        m.n,
        rows.join(", "),
        m.decomp.confident_wrong_total,
        m.decomp.syntactically_invalid,
        m.decomp.false_positives
    )
}

/// An 833-task record set whose marginal counts match the reference figures
/// (527 local passes, 596 remote, 413 both; 563 confident at 0.7 of which 397
/// correct; 77 of 166 confident-wrong invalid; 207 remote passes among the
/// 270 low-confidence tasks and 53 among the 77 invalid ones).
fn reconstructed() -> Fixture {
    // (count, confidence, syntax valid, local passed, remote passed)
    const CELLS: [(usize, f64, bool, bool, bool); 10] = [
        (313, 0.9, true, true, true),
        (84, 0.9, true, true, false),
        (23, 0.9, true, false, true),
        (66, 0.9, true, false, false),
        (53, 0.9, false, false, true),
        (24, 0.9, false, false, false),
        (100, 0.5, true, true, true),
        (30, 0.5, true, true, false),
        (107, 0.5, true, false, true),
        (33, 0.5, true, false, false),
    ];
    let mut tasks = Vec::new();
    let mut preds = Vec::new();
    let record = |id: &str, model: &str, conf: f64, valid: bool, passed: bool| PredictionRecord {
        task_id: id.to_owned(),
        model_id: model.to_owned(),
        raw_text: "return x".into(),
        text: Some("return x".into()),
        tokens: (0..3).map(|i| TokenLogProb::new(format!("t{i}"), conf.ln())).collect(),
        latency: None,
        passed: Some(passed),
        syntax_valid: Some(valid),
    };
    for (count, conf, valid, local, remote) in CELLS {
        for _ in 0..count {
            let id = format!("r{:04}", tasks.len());
            tasks.push(FimTask::new(id.clone(), Language::Python, "def f(x):\n    ", "\n"));
            preds.push(record(&id, "local", conf, valid, local));
            preds.push(record(&id, "remote", 0.9, true, remote));
        }
    }
    Fixture::new(tasks, PredictionSet::from_records(preds).unwrap(), "local", "remote")
}

pub fn criterion() -> Outcome {
    let fixture = reconstructed();
    let all: Vec<usize> = (0..fixture.tasks.len()).collect();
    let self_check = measure(&fixture, &all);
    let self_misses = compare(&self_check);
    if !self_misses.is_empty() {
        return Outcome::fail(format!(
            "count-reconstruction self-check disagrees: {}",
            self_misses.join("; ")
        ));
    }
    let note = format!("self-check on reconstructed counts: {}", describe(&self_check));

    let Some(dir) = std::env::var_os("FIMROUTE_REPLAY_DIR").map(PathBuf::from) else {
        return Outcome::skip("replication artifacts not available (set FIMROUTE_REPLAY_DIR)").with_notes(vec![note]);
    };
    let started = Instant::now();
    let config_path = dir.join("fimroute.toml");
    let file = match FileConfig::load(config_path.exists().then_some(config_path.as_path())) {
        Ok(f) => f,
        Err(e) => return Outcome::fail(format!("{e:#}")),
    };
    let data = DataArgs {
        dataset: file.data.dataset.clone().or_else(|| Some(dir.join("tasks.jsonl"))),
        predictions: file.data.predictions.clone().or_else(|| Some(dir.join("predictions.jsonl"))),
        local_model: std::env::var("FIMROUTE_LOCAL_MODEL").ok(),
        remote_model: std::env::var("FIMROUTE_REMOTE_MODEL").ok(),
        n: None,
        seed: None,
    };
    let inputs = match load_inputs(&file, &data) {
        Ok(i) => i,
        Err(e) => return Outcome::fail(format!("loading artifacts: {e:#}")),
    };
    let n = file.data.n.unwrap_or(DEFAULT_CALIBRATION_N);
    let seed = file.data.seed.unwrap_or(DEFAULT_SPLIT_SEED);
    let fixture = Fixture::new(
        inputs.tasks,
        (*inputs.predictions).clone(),
        &inputs.local_model,
        &inputs.remote_model,
    );
    let test_idx = match split_indices(fixture.tasks.len(), n, seed) {
        Ok((_, test)) => test,
        Err(e) => return Outcome::fail(e.to_string()),
    };
    let measured = measure(&fixture, &test_idx);
    let elapsed = started.elapsed().as_secs_f64();
    let mut misses = compare(&measured);
    if elapsed > 300.0 {
        misses.push(format!("runtime {elapsed:.0}s exceeds 5 min"));
    }
    Outcome::check(
        misses.is_empty(),
        if misses.is_empty() {
            format!("{} within ±{TOLERANCE_PP} pp in {elapsed:.1}s", describe(&measured))
        } else {
            misses.join("; ")
        },
    )
    .with_notes(vec![note])
}
