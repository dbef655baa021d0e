use fimroute::backend::{ConfidenceDist, SubtypeProbs, SyntheticModelSpec};
use fimroute::calibration::{calibrate_threshold, default_grid, robustness_sweep, simulate, CalibrationOptions};
use fimroute::eval::{oracle_bound, TaskDecision};
use fimroute::model::Language;
use fimroute::records::OutcomeRecord;
use fimroute::routers::{Policy, RouterConfig, Thresholds};
use fimroute::synth::{MaskPolicy, SynthConfig};
use fimroute::syntax::SyntaxStatus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::support::{router_config, Failures, Fixture, Outcome};

fn thresholds(t: f64) -> Thresholds {
    Thresholds {
        t_star: t,
        ..RouterConfig::default().thresholds()
    }
}

fn random_dist(rng: &mut ChaCha8Rng) -> ConfidenceDist {
    match rng.random_range(0..3) {
        0 => ConfidenceDist::Beta {
            alpha: rng.random_range(0.5..8.0),
            beta: rng.random_range(0.5..8.0),
        },
        1 => {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            ConfidenceDist::Uniform {
                low: a.min(b),
                high: a.max(b),
            }
        }
        _ => ConfidenceDist::Fixed {
            value: (rng.random_range(0..=20) as f64) / 20.0,
        },
    }
}

fn random_spec(rng: &mut ChaCha8Rng, model_id: &str) -> SyntheticModelSpec {
    SyntheticModelSpec {
        model_id: model_id.into(),
        correct_prob: SubtypeProbs::constant(rng.random_range(0.0..=1.0)),
        confidence_given_correct: random_dist(rng),
        confidence_given_wrong: random_dist(rng),
        syntax_break_prob_given_wrong: rng.random_range(0.0..=1.0),
        seed: rng.random(),
    }
}

fn random_synth(rng: &mut ChaCha8Rng) -> SynthConfig {
    SynthConfig {
        n_tasks: rng.random_range(20..=80),
        language: if rng.random_bool(0.5) {
            Language::Python
        } else {
            Language::Java
        },
        seed: rng.random(),
        mask: if rng.random_bool(0.5) {
            MaskPolicy::ReturnLine
        } else {
            MaskPolicy::AnyLine
        },
        local: random_spec(rng, "local"),
        remote: random_spec(rng, "remote"),
    }
}

/// Criterion 2.
pub fn monotone() -> Outcome {
    const SETS: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = default_grid();
    let mut fails = Failures::default();
    let (mut generated, mut accepted, mut comparisons, mut live_checks) = (0, 0, 0, 0);
    let mut strict_gain = 0;
    while accepted < SETS {
        generated += 1;
        if generated > 10 * SETS {
            return Outcome::fail(format!("only {accepted} of {generated} generated sets meet the precondition"));
        }
        let fixture = Fixture::from_synth(&random_synth(&mut rng));
        if fixture
            .records
            .iter()
            .any(|r| r.syntax == SyntaxStatus::Invalid && r.local_passed)
        {
            continue;
        }
        accepted += 1;
        for &t in &grid {
            let sc = simulate(Policy::Synconf, &thresholds(t), &fixture.records).unwrap();
            let co = simulate(Policy::ConfidenceOnly, &thresholds(t), &fixture.records).unwrap();
            comparisons += 1;
            strict_gain += (sc.passed > co.passed) as usize;
            if sc.passed < co.passed {
                fails.push(format!("set {accepted} t={t}: synconf {} < confidence_only {}", sc.passed, co.passed));
            }
        }
        // Live routing agrees with the simulation on a sample of sets.
        if accepted % 10 == 0 {
            let t = grid[rng.random_range(0..grid.len())];
            for policy in [Policy::Synconf, Policy::ConfidenceOnly] {
                let (report, _) = fixture.evaluate(router_config(policy, t), None);
                let sim = simulate(policy, &thresholds(t), &fixture.records).unwrap();
                live_checks += 1;
                if (report.counts.n_passed, report.counts.n_local) != (sim.passed, sim.kept_local) {
                    fails.push(format!("set {accepted} {policy} t={t}: live routing differs from simulation"));
                }
            }
        }
    }
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!(
                "{accepted} sets ({generated} generated), {comparisons} (set, t) comparisons, 0 violations, {strict_gain} strict gains; {live_checks} live cross-checks"
            )
        } else {
            fails.summary()
        },
    )
}

fn same_routes(a: &[TaskDecision], b: &[TaskDecision]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.task_id == y.task_id && x.kept_local == y.kept_local && x.passed == y.passed && x.model_id == y.model_id)
}

/// Criterion 3.
pub fn boundaries() -> Outcome {
    let mut fails = Failures::default();
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut config = SynthConfig::reference_rates(1500, 300 + seed);
        if seed % 2 == 1 {
            config.language = Language::Java;
        }
        let fixture = Fixture::from_synth(&config);
        let max_conf = fixture.records.iter().map(|r| r.confidence).fold(0.0, f64::max);
        if max_conf >= 1.0 {
            fails.push(format!("seed {seed}: max confidence is 1, no threshold lies above it"));
            continue;
        }
        let above = (max_conf + 1.0) / 2.0;
        let (local, local_d) = fixture.evaluate(router_config(Policy::AlwaysLocal, 0.7), None);
        let (remote, remote_d) = fixture.evaluate(router_config(Policy::AlwaysRemote, 0.7), None);
        let cases = [
            (Policy::ConfidenceOnly, 0.0, &local, &local_d, "always_local"),
            (Policy::ConfidenceOnly, above, &remote, &remote_d, "always_remote"),
            (Policy::Synconf, above, &remote, &remote_d, "always_remote"),
        ];
        for (policy, t, want, want_d, name) in cases {
            let (got, got_d) = fixture.evaluate(router_config(policy, t), None);
            checked += 1;
            let counts = |r: &fimroute::eval::EvalReport| {
                (r.counts.n_tasks, r.counts.n_passed, r.counts.n_local, r.counts.n_escalated, r.pass1, r.local_rate)
            };
            if counts(&got) != counts(want) || !same_routes(&got_d, want_d) {
                fails.push(format!(
                    "seed {seed}: {policy} at t={t:.4} gives {}/{} vs {name} {}/{}",
                    got.counts.n_passed, got.counts.n_local, want.counts.n_passed, want.counts.n_local
                ));
            }
            let sim = simulate(policy, &thresholds(t), &fixture.records).unwrap();
            if (sim.passed, sim.kept_local) != (want.counts.n_passed, want.counts.n_local) {
                fails.push(format!("seed {seed}: simulated {policy} at t={t:.4} differs from {name}"));
            }
        }
    }
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!("{checked} live comparisons on 5 datasets of 1500 tasks: counts and per-task routes bit-equal")
        } else {
            fails.summary()
        },
    )
}

fn kept_by_rule(policy: Policy, lo: f64, hi: f64, r: &OutcomeRecord) -> bool {
    match policy {
        Policy::Synconf => r.confidence >= lo && r.syntax == SyntaxStatus::Valid,
        Policy::ConfidenceOnly => r.confidence >= lo,
        Policy::Cascade => {
            if r.confidence < lo {
                false
            } else if r.confidence >= hi {
                true
            } else {
                !r.degenerate
            }
        }
        _ => unreachable!(),
    }
}

fn passes_by_rule(policy: Policy, lo: f64, hi: f64, records: &[OutcomeRecord]) -> usize {
    records
        .iter()
        .filter(|r| {
            if kept_by_rule(policy, lo, hi, r) {
                r.local_passed
            } else {
                r.remote_passed
            }
        })
        .count()
}

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<OutcomeRecord> {
    (0..n)
        .map(|i| OutcomeRecord {
            task_id: format!("t{i}"),
            local_passed: rng.random(),
            remote_passed: rng.random(),
            confidence: if rng.random_bool(0.5) {
                rng.random_range(0..=20) as f64 / 20.0
            } else {
                rng.random_range(0.0..=1.0)
            },
            syntax: [SyntaxStatus::Valid, SyntaxStatus::Invalid, SyntaxStatus::CheckerError][rng.random_range(0..3)],
            degenerate: rng.random_bool(0.2),
        })
        .collect()
}

/// Criterion 4.
pub fn brute_force() -> Outcome {
    const INSTANCES: usize = 1500;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = default_grid();
    let opts = CalibrationOptions {
        min_tasks: 0,
        ..CalibrationOptions::default()
    };
    let mut fails = Failures::default();
    let mut searches = 0;
    for inst in 0..INSTANCES {
        let n = rng.random_range(1..=12);
        let records = random_records(&mut rng, n);

        // Every assignment of tasks to models; the best one is the oracle.
        let best = (0u32..1 << n)
            .map(|mask| {
                records
                    .iter()
                    .enumerate()
                    .filter(|(i, r)| if mask >> i & 1 == 1 { r.local_passed } else { r.remote_passed })
                    .count()
            })
            .max()
            .unwrap();
        let oracle = oracle_bound(&records);
        if (oracle.num, oracle.den) != (best, n) {
            fails.push(format!("instance {inst}: oracle {}/{} vs enumeration {best}/{n}", oracle.num, oracle.den));
        }

        for policy in [Policy::Synconf, Policy::ConfidenceOnly, Policy::Cascade] {
            searches += 1;
            let search = calibrate_threshold(&records, policy, &grid, &opts).unwrap();
            let got = passes_by_rule(policy, search.cascade_low, search.cascade_high, &records);
            let (true_max, smallest) = if policy == Policy::Cascade {
                let mut best = (0, (f64::NAN, f64::NAN));
                for &lo in &grid {
                    for &hi in grid.iter().filter(|&&h| h >= lo) {
                        let p = passes_by_rule(policy, lo, hi, &records);
                        if p > best.0 || best.1 .0.is_nan() {
                            best = (p, (lo, hi));
                        }
                    }
                }
                best
            } else {
                let mut best = (0, (f64::NAN, f64::NAN));
                for &t in &grid {
                    let p = passes_by_rule(policy, t, t, &records);
                    if p > best.0 || best.1 .0.is_nan() {
                        best = (p, (t, t));
                    }
                }
                best
            };
            if got != true_max {
                fails.push(format!("instance {inst} {policy}: t* gives {got}, grid maximum is {true_max}"));
            }
            let chosen = if policy == Policy::Cascade {
                (search.cascade_low, search.cascade_high)
            } else {
                (search.t_star, search.t_star)
            };
            if chosen != smallest {
                fails.push(format!("instance {inst} {policy}: chose {chosen:?}, smallest maximizer is {smallest:?}"));
            }
        }
    }
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!("{INSTANCES} instances of 1-12 tasks: oracle matches enumeration; {searches} threshold searches attain the grid maximum")
        } else {
            fails.summary()
        },
    )
}

/// Criterion 6.
pub fn degradation() -> Outcome {
    let mut fails = Failures::default();
    let mut total = 0;
    for (language, n) in [(Language::Python, 600), (Language::Java, 600), (Language::Cpp, 40)] {
        let mut config = SynthConfig::reference_rates(n, 66);
        config.language = language.clone();
        config.mask = MaskPolicy::AnyLine;
        config.local.correct_prob = SubtypeProbs::constant(0.0);
        config.local.syntax_break_prob_given_wrong = 1.0;
        config.local.confidence_given_wrong = ConfidenceDist::Uniform { low: 0.75, high: 1.0 };
        let fixture = Fixture::from_synth(&config);
        let (remote, remote_d) = fixture.evaluate(router_config(Policy::AlwaysRemote, 0.7), None);
        let (sc, sc_d) = fixture.evaluate(router_config(Policy::Synconf, 0.7), None);
        total += n;
        if sc.counts.n_escalated != n || sc.counts.n_local != 0 {
            fails.push(format!("{language}: {} of {n} escalated", sc.counts.n_escalated));
        }
        if sc.reasons.get("syntax_invalid").copied() != Some(n) {
            fails.push(format!("{language}: reasons {:?}", sc.reasons));
        }
        if sc.counts.n_passed != remote.counts.n_passed || sc.pass1 != remote.pass1 || !same_routes(&sc_d, &remote_d) {
            fails.push(format!(
                "{language}: synconf {} vs always_remote {}",
                sc.pass1, remote.pass1
            ));
        }
    }
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!("{total} tasks (python, java, cpp) with all-invalid local output: 100% escalated, pass@1 equal to always_remote on every task")
        } else {
            fails.summary()
        },
    )
}

/// Criterion 7.
pub fn robustness() -> Outcome {
    const SIZES: [usize; 4] = [50, 100, 200, 400];
    const SEEDS: [u64; 3] = [1, 2, 3];
    let mut config = SynthConfig::reference_rates(10_000, 77);
    config.local.confidence_given_correct = ConfidenceDist::Uniform { low: 0.71, high: 1.0 };
    config.local.confidence_given_wrong = ConfidenceDist::Uniform { low: 0.62, high: 0.69 };
    let fixture = Fixture::from_synth(&config);
    let sweep = robustness_sweep(
        &fixture.records,
        Policy::Synconf,
        &SIZES,
        &SEEDS,
        &default_grid(),
        &CalibrationOptions::default(),
    )
    .unwrap();
    let pp = 100.0 * sweep.pass1_spread;
    let rows: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("n={} pass@1 {:.2}±{:.2}% t* {:.2}±{:.3}", r.size, 100.0 * r.mean_pass1, 100.0 * r.std_pass1, r.mean_t_star, r.std_t_star))
        .collect();

    // Same sweep with overlapping confidence distributions, for contrast.
    let overlap = Fixture::from_synth(&SynthConfig::reference_rates(10_000, 77));
    let contrast = robustness_sweep(
        &overlap.records,
        Policy::Synconf,
        &SIZES,
        &SEEDS,
        &default_grid(),
        &CalibrationOptions::default(),
    )
    .unwrap();
    let mut notes = rows;
    notes.push(format!(
        "overlapping confidences (not gated): pass@1 spread {:.2} pp, t* spread {:.2}",
        100.0 * contrast.pass1_spread,
        contrast.t_star_spread
    ));
    Outcome::check(
        pp <= 1.0 && sweep.t_star_spread <= 0.05 + 1e-12,
        format!(
            "10,000 tasks, sizes {SIZES:?} x {} seeds: pass@1 spread {pp:.2} pp (<= 1), t* spread {:.2} (<= 0.05)",
            SEEDS.len(),
            sweep.t_star_spread
        ),
    )
    .with_notes(notes)
}
