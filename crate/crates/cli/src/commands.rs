//! Subcommand implementations.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fimroute::backend::ReplayBackend;
use fimroute::calibration::{
    self, default_grid, load_artifact, robustness_sweep, simulate, write_artifact, CalibrationArtifact,
    CalibrationOptions, CalibrationResult, Provenance, SweepReport, TieBreak,
};
use fimroute::eval::{evaluate_strategy, render_table, EvalReport, FailureDecomposition, Judge, Sandbox, SandboxConfig};
use fimroute::model::{
    load_dataset, load_predictions, split_indices, write_dataset, write_predictions, FimTask, PredictionSet,
};
use fimroute::records::{build_outcome_records, OutcomeRecord};
use fimroute::routers::{Policy, Router, RouterConfig, Thresholds, TrainedParams};
use fimroute::synth::{synthesize, SynthConfig};
use fimroute::syntax::{CheckerRegistry, SyntaxGate};
use serde::Serialize;

use crate::settings::FileConfig;
use crate::{CalibrateArgs, DataArgs, EvalArgs, ReportArgs, ServeArgs, SynthArgs};

pub const DEFAULT_CALIBRATION_N: usize = 200;
pub const DEFAULT_SPLIT_SEED: u64 = 42;
pub const DEFAULT_SWEEP_SIZES: [usize; 4] = [50, 100, 200, 400];
pub const DEFAULT_SWEEP_SEEDS: u64 = 3;

/// Dataset, predictions and the two model ids, as resolved from flags and file.
pub struct Inputs {
    pub tasks: Vec<FimTask>,
    pub predictions: Arc<PredictionSet>,
    pub local_model: String,
    pub remote_model: String,
    pub dataset_id: String,
}

pub fn load_inputs(file: &FileConfig, data: &DataArgs) -> Result<Inputs> {
    let dataset = data
        .dataset
        .clone()
        .or_else(|| file.data.dataset.clone())
        .context("no dataset given (use --dataset or [data].dataset)")?;
    let predictions_path = data
        .predictions
        .clone()
        .or_else(|| file.data.predictions.clone())
        .context("no predictions given (use --predictions or [data].predictions)")?;
    let tasks = load_dataset(&dataset)?;
    if tasks.is_empty() {
        bail!("dataset {} contains no tasks", dataset.display());
    }
    let predictions = load_predictions(&predictions_path, Some(&tasks))?;
    let (local_model, remote_model) = resolve_models(
        data.local_model.clone().or_else(|| file.data.local_model.clone()),
        data.remote_model.clone().or_else(|| file.data.remote_model.clone()),
        &predictions.model_ids(),
    )?;
    Ok(Inputs {
        tasks,
        predictions: Arc::new(predictions),
        local_model,
        remote_model,
        dataset_id: dataset
            .file_name()
            .map_or_else(|| dataset.display().to_string(), |n| n.to_string_lossy().into_owned()),
    })
}

/// Fills in a missing model id when the predictions hold exactly two models.
pub fn resolve_models(local: Option<String>, remote: Option<String>, ids: &[String]) -> Result<(String, String)> {
    let other = |id: &str| ids.iter().find(|m| *m != id).cloned();
    let (local, remote) = match (local, remote) {
        (Some(l), Some(r)) => (l, r),
        (Some(l), None) if ids.len() == 2 => {
            let r = other(&l).unwrap_or_default();
            (l, r)
        }
        (None, Some(r)) if ids.len() == 2 => (other(&r).unwrap_or_default(), r),
        _ => bail!(
            "specify --local-model and --remote-model (predictions contain: {})",
            ids.join(", ")
        ),
    };
    for id in [&local, &remote] {
        if !ids.contains(id) {
            bail!("model `{id}` has no predictions (found: {})", ids.join(", "));
        }
    }
    if local == remote {
        bail!("local and remote model are both `{local}`");
    }
    Ok((local, remote))
}

/// `(calibration, test)` indices; `n = 0` puts every task in the test split.
pub fn split(len: usize, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Ok((vec![], (0..len).collect()));
    }
    if n >= len {
        bail!("calibration size --n {n} must be smaller than the dataset ({len} tasks)");
    }
    Ok(split_indices(len, n, seed)?)
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn default_gate() -> SyntaxGate {
    SyntaxGate::new(Arc::new(CheckerRegistry::with_defaults()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn provenance(inputs: &Inputs, config: &RouterConfig, n: usize, seed: Option<u64>) -> Provenance {
    Provenance {
        dataset_id: inputs.dataset_id.clone(),
        n,
        seed,
        policy: config.policy,
        confidence_metric: config.confidence_metric,
        local_model: inputs.local_model.clone(),
        remote_model: inputs.remote_model.clone(),
    }
}

pub fn calibrate(file: &FileConfig, args: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let config = args.router.overrides().apply(&file.router)?;
    let inputs = load_inputs(file, &args.data)?;
    let gate = default_gate();
    let records = build_outcome_records(
        &inputs.tasks,
        &inputs.predictions,
        &inputs.local_model,
        &inputs.remote_model,
        config.confidence_metric,
        &gate,
    )?;
    let opts = CalibrationOptions {
        tie_break: if args.prefer_largest {
            TieBreak::Largest
        } else {
            TieBreak::Smallest
        },
        allow_small: args.allow_small,
        ..CalibrationOptions::default()
    };
    let seed = args.data.seed.or(file.data.seed).unwrap_or(DEFAULT_SPLIT_SEED);
    let explicit_n = args.data.n.or(file.data.n);

    if args.seeds.is_some() || !args.sizes.is_empty() {
        let count = args.seeds.unwrap_or(DEFAULT_SWEEP_SEEDS);
        if count == 0 {
            bail!("--seeds must be at least 1");
        }
        let sizes = match (&args.sizes[..], explicit_n) {
            ([], Some(n)) => vec![n],
            ([], None) => DEFAULT_SWEEP_SIZES.to_vec(),
            (sizes, _) => sizes.to_vec(),
        };
        let seeds: Vec<u64> = (0..count).map(|i| seed.wrapping_add(i)).collect();
        let report = robustness_sweep(&records, config.policy, &sizes, &seeds, &default_grid(), &opts)?;
        write!(out, "{}", render_sweep(&report))?;
        if let Some(path) = &args.out {
            write_json(path, &report)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        return Ok(());
    }

    let n = explicit_n.unwrap_or(DEFAULT_CALIBRATION_N);
    if n == 0 {
        bail!("calibration needs --n of at least 1");
    }
    let (cal_idx, _) = split(inputs.tasks.len(), n, seed)?;
    let cal_tasks = pick(&inputs.tasks, &cal_idx);
    let cal_records = pick(&records, &cal_idx);
    let result = calibration::calibrate(
        &cal_tasks,
        &cal_records,
        &config,
        &default_grid(),
        &opts,
        provenance(&inputs, &config, n, Some(seed)),
    )?;
    write!(out, "{}", render_calibration(&result))?;
    let path = args.out.clone().unwrap_or_else(|| PathBuf::from("calibration.json"));
    write_artifact(&result, &path)?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

/// Replaces every recorded `passed` flag with the result of running the tests.
fn rejudge(tasks: &[FimTask], predictions: &PredictionSet) -> Result<PredictionSet> {
    let sandbox = Sandbox::new(SandboxConfig::default());
    let by_id: HashMap<&str, &FimTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut records = Vec::with_capacity(predictions.len());
    for record in predictions.iter() {
        let mut record = record.clone();
        if let Some(task) = by_id.get(record.task_id.as_str()) {
            let text = record.completion(task).text;
            record.passed = Some(sandbox.execute_pass1(task, &text)?.passed());
        }
        records.push(record);
    }
    Ok(PredictionSet::from_records(records)?)
}

struct SplitData<'a> {
    inputs: &'a Inputs,
    cal_tasks: Vec<FimTask>,
    cal_records: Vec<OutcomeRecord>,
    n: usize,
    seed: u64,
}

fn configure(
    policy: Policy,
    base: &RouterConfig,
    threshold: Option<f64>,
    artifacts: &[CalibrationResult],
    split: &SplitData<'_>,
) -> Result<(RouterConfig, Option<TrainedParams>)> {
    let config = RouterConfig {
        policy,
        ..base.clone()
    };
    if let Some(artifact) = artifacts.iter().find(|a| a.policy == policy) {
        let config = artifact.apply_to(&config);
        config.validate()?;
        return Ok((config, artifact.trained.clone()));
    }
    if let (Some(t), true) = (threshold, policy.uses_threshold()) {
        let config = RouterConfig { threshold: t, ..config };
        config.validate()?;
        return Ok((config, None));
    }
    let calibrated = policy.is_trained() || policy.uses_threshold() || policy == Policy::Cascade;
    if !calibrated {
        return Ok((config, None));
    }
    if split.cal_records.is_empty() {
        if policy.is_trained() {
            bail!("strategy `{policy}` needs a calibration split (--n > 0) or a --calibration artifact");
        }
        return Ok((config, None));
    }
    let result = calibration::calibrate(
        &split.cal_tasks,
        &split.cal_records,
        &config,
        &default_grid(),
        &CalibrationOptions::default(),
        provenance(split.inputs, &config, split.n, Some(split.seed)),
    )?;
    Ok((result.apply_to(&config), result.trained))
}

pub fn eval(file: &FileConfig, args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut base = file.router.clone();
    if let Some(metric) = args.metric {
        base.confidence_metric = metric;
    }
    if let Some(t) = args.threshold {
        RouterConfig {
            threshold: t,
            ..base.clone()
        }
        .validate()?;
    }
    let mut inputs = load_inputs(file, &args.data)?;
    if args.execute {
        inputs.predictions = Arc::new(rejudge(&inputs.tasks, &inputs.predictions)?);
    }
    let strategies = if args.strategies.is_empty() {
        Policy::ALL.to_vec()
    } else {
        args.strategies.clone()
    };
    let artifacts = args
        .calibration
        .iter()
        .map(load_artifact)
        .collect::<fimroute::Result<Vec<_>>>()?;

    let n = args.data.n.or(file.data.n).unwrap_or(DEFAULT_CALIBRATION_N);
    let seed = args.data.seed.or(file.data.seed).unwrap_or(DEFAULT_SPLIT_SEED);
    let (cal_idx, test_idx) = split(inputs.tasks.len(), n, seed)?;
    let gate = default_gate();
    let records = build_outcome_records(
        &inputs.tasks,
        &inputs.predictions,
        &inputs.local_model,
        &inputs.remote_model,
        base.confidence_metric,
        &gate,
    )?;
    let split_data = SplitData {
        inputs: &inputs,
        cal_tasks: pick(&inputs.tasks, &cal_idx),
        cal_records: pick(&records, &cal_idx),
        n,
        seed,
    };
    let test_tasks = pick(&inputs.tasks, &test_idx);
    let test_records = pick(&records, &test_idx);

    let local = ReplayBackend::new(inputs.local_model.as_str(), &inputs.predictions, &inputs.tasks);
    let remote = ReplayBackend::new(inputs.remote_model.as_str(), &inputs.predictions, &inputs.tasks);
    let judge = Judge::recorded(inputs.predictions.clone());

    let mut reports = Vec::with_capacity(strategies.len());
    let mut thresholds = Vec::with_capacity(strategies.len());
    for &policy in &strategies {
        let (config, trained) = configure(policy, &base, args.threshold, &artifacts, &split_data)?;
        let router = Router::new(config.clone(), trained)?;
        let (report, _) = evaluate_strategy(policy.as_str(), &router, &test_tasks, &local, &remote, &gate, &judge)?;
        reports.push(report.with_analysis(&test_records, config.threshold));
        thresholds.push(config.thresholds());
    }

    writeln!(out, 
        "{} test tasks ({} calibration, seed {seed}); local `{}`, remote `{}`\n",
        test_tasks.len(),
        cal_idx.len(),
        inputs.local_model,
        inputs.remote_model
    )?;
    write!(out, "{}", render_table(&reports))?;
    if let Some(decomp) = reports
        .iter()
        .find(|r| r.policy == Policy::Synconf)
        .and_then(|r| r.failure_decomp)
    {
        writeln!(out)?;
        write!(out, "{}", render_decomposition(&decomp))?;
    }
    if args.sweep {
        writeln!(out)?;
        write!(out, "{}", render_method_sweep(&test_records)?)?;
    }
    if let Some(path) = &args.out {
        write_json(path, &reports)?;
        writeln!(out, "wrote {}", path.display())?;
    }

    let failed: Vec<(&str, usize)> = reports
        .iter()
        .filter(|r| r.counts.n_backend_errors > 0)
        .map(|r| (r.strategy.as_str(), r.counts.n_backend_errors))
        .collect();
    if !failed.is_empty() {
        for (strategy, count) in &failed {
            eprintln!("{strategy}: {count} tasks failed with backend errors");
        }
        bail!("evaluation finished with backend errors");
    }
    Ok(())
}

pub fn serve(file: &FileConfig, args: &ServeArgs) -> Result<()> {
    let mut config = file
        .gateway()
        .context("serve needs --config pointing at a gateway file")?;
    config.router = args.router.overrides().apply(&config.router)?;
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    if let Some(path) = &args.calibration {
        config.calibration = Some(path.clone());
    }
    config.validate()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(fimroute_gateway::serve(config))?;
    Ok(())
}

pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SynthConfig>(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => SynthConfig::reference_rates(args.n.unwrap_or(1000), args.seed.unwrap_or(0)),
    };
    if let Some(n) = args.n {
        config.n_tasks = n;
    }
    if let (Some(seed), Some(_)) = (args.seed, &args.spec) {
        config.seed = seed;
        config.local.seed = seed.wrapping_add(1);
        config.remote.seed = seed.wrapping_add(2);
    }
    if let Some(language) = &args.language {
        config.language = language.clone();
    }
    if config.n_tasks == 0 {
        bail!("--n must be at least 1");
    }
    let artifacts = synthesize(&config)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let tasks_path = args.out.join("tasks.jsonl");
    let preds_path = args.out.join("predictions.jsonl");
    let mut tasks_out = BufWriter::new(File::create(&tasks_path)?);
    write_dataset(&artifacts.tasks, &mut tasks_out)?;
    tasks_out.flush()?;
    let mut preds_out = BufWriter::new(File::create(&preds_path)?);
    write_predictions(&artifacts.predictions, &mut preds_out)?;
    preds_out.flush()?;
    let manifest = format!(
        "[data]\ndataset = \"tasks.jsonl\"\npredictions = \"predictions.jsonl\"\nlocal_model = {}\nremote_model = {}\n",
        toml::Value::String(config.local.model_id.clone()),
        toml::Value::String(config.remote.model_id.clone()),
    );
    std::fs::write(args.out.join("fimroute.toml"), manifest)?;

    let rate = |model: &str| {
        let of: Vec<_> = artifacts.predictions.iter().filter(|p| p.model_id == model).collect();
        100.0 * of.iter().filter(|p| p.passed == Some(true)).count() as f64 / of.len().max(1) as f64
    };
    writeln!(out, 
        "{} {} tasks; `{}` correct {:.1}%, `{}` correct {:.1}%",
        config.n_tasks,
        config.language,
        config.local.model_id,
        rate(&config.local.model_id),
        config.remote.model_id,
        rate(&config.remote.model_id)
    )?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    for (i, path) in args.files.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        writeln!(out, "== {}", path.display())?;
        if let Ok(reports) = serde_json::from_value::<Vec<EvalReport>>(value.clone()) {
            write!(out, "{}", render_reports(&reports))?;
        } else if let Ok(report) = serde_json::from_value::<EvalReport>(value.clone()) {
            write!(out, "{}", render_reports(std::slice::from_ref(&report)))?;
        } else if let Ok(sweep) = serde_json::from_value::<SweepReport>(value.clone()) {
            write!(out, "{}", render_sweep(&sweep))?;
        } else if let Ok(artifact) = serde_json::from_value::<CalibrationArtifact>(value) {
            write!(out, "{}", render_calibration(&artifact.result))?;
        } else {
            bail!("{}: not an eval report, sweep report or calibration artifact", path.display());
        }
    }
    Ok(())
}

fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = render_table(reports);
    for r in reports {
        if let (Policy::Synconf, Some(d)) = (r.policy, r.failure_decomp) {
            out.push('\n');
            out.push_str(&render_decomposition(&d));
        }
    }
    out
}

pub fn render_decomposition(d: &FailureDecomposition) -> String {
    let mut out = format!("Failure decomposition at t = {:.2}\n", d.threshold);
    let _ = writeln!(out, "  confident            {:>6}", d.confident);
    let _ = writeln!(out, "  confident-correct    {:>6}", d.confident_correct);
    let _ = writeln!(out, "  false positives      {:>6}", d.false_positives);
    let _ = writeln!(out, "  confident-wrong      {:>6}", d.confident_wrong_total);
    let _ = writeln!(
        out,
        "    syntax-invalid     {:>6}  ({:.1}%)",
        d.syntactically_invalid,
        d.invalid_fraction().percent()
    );
    let _ = writeln!(out, "    semantically wrong {:>6}", d.semantically_wrong);
    let _ = writeln!(out, "    checker error      {:>6}", d.checker_error);
    out
}

pub fn render_calibration(result: &CalibrationResult) -> String {
    let p = &result.provenance;
    let mut out = format!(
        "policy {} on {} calibration tasks of {} (seed {}), metric {}\n",
        result.policy,
        p.n,
        p.dataset_id,
        p.seed.map_or_else(|| "-".into(), |s| s.to_string()),
        result.confidence_metric
    );
    if result.policy == Policy::Cascade {
        let _ = writeln!(out, "{:>6}  {:>6}  {:>7}  {:>7}", "low", "high", "pass@1", "local");
        let mut lows: Vec<f64> = result.grid.iter().map(|g| g.threshold).collect();
        lows.dedup();
        for low in lows {
            let best = result
                .grid
                .iter()
                .filter(|g| g.threshold == low)
                .max_by(|a, b| a.passed.cmp(&b.passed).then(b.cascade_high.partial_cmp(&a.cascade_high).unwrap()));
            if let Some(g) = best {
                let _ = writeln!(
                    out,
                    "{:>6.2}  {:>6.2}  {:>6.1}%  {:>6.1}%",
                    g.threshold,
                    g.cascade_high.unwrap_or(f64::NAN),
                    100.0 * g.pass1,
                    100.0 * g.local_rate
                );
            }
        }
        let _ = writeln!(out, "chosen: low = {:.2}, high = {:.2}", result.cascade_low, result.cascade_high);
    } else if !result.grid.is_empty() {
        let _ = writeln!(out, "{:>6}  {:>7}  {:>7}", "t", "pass@1", "local");
        for g in &result.grid {
            let mark = if g.threshold == result.t_star { "  *" } else { "" };
            let _ = writeln!(
                out,
                "{:>6.2}  {:>6.1}%  {:>6.1}%{mark}",
                g.threshold,
                100.0 * g.pass1,
                100.0 * g.local_rate
            );
        }
        let _ = writeln!(out, "t* = {:.2}", result.t_star);
    } else if result.trained.is_some() {
        let _ = writeln!(out, "fitted trained parameters");
    }
    out
}

pub fn render_sweep(report: &SweepReport) -> String {
    let mut out = format!("robustness sweep for {}\n", report.policy);
    let _ = writeln!(
        out,
        "{:>6}  {:>5}  {:>11}  {:>9}  {:>7}  {:>6}",
        "size", "runs", "mean pass@1", "std", "mean t*", "std"
    );
    for row in &report.rows {
        let runs = report.runs.iter().filter(|r| r.size == row.size).count();
        let _ = writeln!(
            out,
            "{:>6}  {:>5}  {:>10.2}%  {:>8.2}%  {:>7.3}  {:>6.3}",
            row.size,
            runs,
            100.0 * row.mean_pass1,
            100.0 * row.std_pass1,
            row.mean_t_star,
            row.std_t_star
        );
    }
    let _ = writeln!(
        out,
        "spread over all runs: pass@1 {:.2} pp, t* {:.3}",
        100.0 * report.pass1_spread,
        report.t_star_spread
    );
    out
}

/// pass@1 and local rate per threshold for the two threshold methods.
pub fn render_method_sweep(records: &[OutcomeRecord]) -> Result<String> {
    let mut out = format!(
        "{:>5}  {:>15}  {:>7}  {:>15}  {:>7}\n",
        "t", "synconf pass@1", "local", "conf-only pass@1", "local"
    );
    for t in default_grid() {
        let th = Thresholds {
            t_star: t,
            ..RouterConfig::default().thresholds()
        };
        let sc = simulate(Policy::Synconf, &th, records)?;
        let co = simulate(Policy::ConfidenceOnly, &th, records)?;
        let _ = writeln!(
            out,
            "{t:>5.2}  {:>14.1}%  {:>6.1}%  {:>15.1}%  {:>6.1}%",
            100.0 * sc.pass1(),
            100.0 * sc.local_rate(),
            100.0 * co.pass1(),
            100.0 * co.local_rate()
        );
    }
    let th = RouterConfig::default().thresholds();
    for policy in [Policy::AlwaysLocal, Policy::AlwaysRemote] {
        let sim = simulate(policy, &th, records)?;
        let _ = writeln!(
            out,
            "{policy}: {:.1}% pass@1, {:.1}% local",
            100.0 * sim.pass1(),
            100.0 * sim.local_rate()
        );
    }
    Ok(out)
}
