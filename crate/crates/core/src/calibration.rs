//! Threshold grid search, fitting of the pre-inference routers, the
//! calibration-size robustness sweep and the persisted artifact.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceMetric;
use crate::error::{Error, Result};
use crate::features::{extract_static_features, Embedder, HashedTfEmbedder};
use crate::model::{split_indices, FimTask, MIN_CALIBRATION_TASKS};
use crate::records::OutcomeRecord;
use crate::routers::{
    decide, CombinedIndex, DecisionTree, EloModel, KnnIndex, Match, Policy, RouterConfig, Thresholds, TrainedParams,
};

pub const ARTIFACT_FORMAT: &str = "fimroute-calibration";
pub const ARTIFACT_VERSION: u32 = 1;

/// `{0.00, 0.05, ..., 1.00}`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lowest threshold among equals: most traffic stays local.
    #[default]
    Smallest,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub tie_break: TieBreak,
    pub min_tasks: usize,
    /// Below `min_tasks`, warn instead of failing.
    pub allow_small: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            tie_break: TieBreak::Smallest,
            min_tasks: MIN_CALIBRATION_TASKS,
            allow_small: false,
        }
    }
}

/// Aggregate of one simulated routing pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub n: usize,
    pub passed: usize,
    pub kept_local: usize,
}

impl SimOutcome {
    pub fn pass1(&self) -> f64 {
        ratio(self.passed, self.n)
    }

    pub fn local_rate(&self) -> f64 {
        ratio(self.kept_local, self.n)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Replays a post-inference or fixed policy over recorded outcomes using the
/// same decision rule as live routing.
pub fn simulate(policy: Policy, thresholds: &Thresholds, records: &[OutcomeRecord]) -> Result<SimOutcome> {
    let mut out = SimOutcome {
        n: records.len(),
        passed: 0,
        kept_local: 0,
    };
    for r in records {
        let v = decide(policy, thresholds, r.confidence, r.degenerate, || Ok(r.syntax))?;
        let passed = if v.kept_local { r.local_passed } else { r.remote_passed };
        out.kept_local += v.kept_local as usize;
        out.passed += passed as usize;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// t for threshold policies; the low bound for cascade.
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade_high: Option<f64>,
    pub passed: usize,
    pub kept_local: usize,
    pub n: usize,
    pub pass1: f64,
    pub local_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub t_star: f64,
    pub cascade_low: f64,
    pub cascade_high: f64,
    pub points: Vec<GridPoint>,
}

impl ThresholdSearch {
    pub fn best(&self) -> &GridPoint {
        self.points
            .iter()
            .find(|p| p.threshold == self.t_star && p.cascade_high.is_none_or(|h| h == self.cascade_high))
            .expect("t_star is a grid point")
    }
}

fn check_records(records: &[OutcomeRecord], opts: &CalibrationOptions) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Argument("calibration needs at least one task".into()));
    }
    if records.len() < opts.min_tasks {
        if opts.allow_small {
            tracing::warn!(n = records.len(), min = opts.min_tasks, "calibrating on a small set");
        } else {
            return Err(Error::Argument(format!(
                "calibration set has {} tasks, below the minimum of {}",
                records.len(),
                opts.min_tasks
            )));
        }
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.confidence)) {
        return Err(Error::Validation(format!(
            "task `{}` has confidence {} outside [0, 1]",
            r.task_id, r.confidence
        )));
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("threshold grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Argument("threshold grid must be strictly increasing within [0, 1]".into()));
    }
    Ok(())
}

fn point(threshold: f64, cascade_high: Option<f64>, sim: SimOutcome) -> GridPoint {
    GridPoint {
        threshold,
        cascade_high,
        passed: sim.passed,
        kept_local: sim.kept_local,
        n: sim.n,
        pass1: sim.pass1(),
        local_rate: sim.local_rate(),
    }
}

/// Grid search for the pass@1-maximizing threshold. Cascade searches all
/// `(low, high)` pairs with `low <= high`; equal scores resolve by
/// `opts.tie_break` on `low`, then `high`.
pub fn calibrate_threshold(
    records: &[OutcomeRecord],
    policy: Policy,
    grid: &[f64],
    opts: &CalibrationOptions,
) -> Result<ThresholdSearch> {
    check_records(records, opts)?;
    check_grid(grid)?;
    let candidates: Vec<(f64, Option<f64>)> = match policy {
        Policy::Synconf | Policy::ConfidenceOnly => grid.iter().map(|&t| (t, None)).collect(),
        Policy::Cascade => grid
            .iter()
            .flat_map(|&lo| grid.iter().filter(move |&&hi| hi >= lo).map(move |&hi| (lo, Some(hi))))
            .collect(),
        Policy::AlwaysLocal | Policy::AlwaysRemote => vec![(grid[0], None)],
        other => {
            return Err(Error::Argument(format!(
                "policy `{other}` has no confidence threshold to calibrate"
            )))
        }
    };
    let points: Vec<GridPoint> = candidates
        .par_iter()
        .map(|&(t, hi)| {
            let th = Thresholds {
                t_star: t,
                cascade_low: t,
                cascade_high: hi.unwrap_or(t),
            };
            simulate(policy, &th, records).map(|sim| point(t, hi, sim))
        })
        .collect::<Result<_>>()?;

    let best_passed = points.iter().map(|p| p.passed).max().expect("non-empty grid");
    let mut best = points.iter().filter(|p| p.passed == best_passed);
    let chosen = match opts.tie_break {
        TieBreak::Smallest => best.next(),
        TieBreak::Largest => best.next_back(),
    }
    .expect("maximum exists");
    let (t_star, cascade_high) = (chosen.threshold, chosen.cascade_high.unwrap_or(chosen.threshold));
    Ok(ThresholdSearch {
        t_star,
        cascade_low: t_star,
        cascade_high,
        points,
    })
}

/// Decision tree on static features; labels are local-correct flags.
pub fn train_tree(tasks: &[FimTask], labels: &[bool], config: &RouterConfig) -> Result<DecisionTree> {
    if !labels.is_empty() && (labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)) {
        tracing::warn!("calibration labels have a single class; tree is a constant router");
    }
    let samples: Vec<Vec<f64>> = tasks
        .iter()
        .map(|t| extract_static_features(t).to_array().to_vec())
        .collect();
    DecisionTree::fit(&samples, labels, config.tree_max_depth, config.tree_min_leaf)
}

pub fn build_knn_index(embeddings: Vec<Vec<f64>>, labels: Vec<bool>, k: usize) -> Result<KnnIndex> {
    KnnIndex::build(embeddings, labels, k)
}

pub fn compute_elo(records: &[OutcomeRecord], embeddings: Vec<Vec<f64>>, config: &RouterConfig) -> Result<EloModel> {
    let matches = records
        .iter()
        .map(|r| Match {
            local_passed: r.local_passed,
            remote_passed: r.remote_passed,
        })
        .collect();
    EloModel::fit(matches, embeddings, config.elo)
}

fn align<'a>(tasks: &'a [FimTask], records: &[OutcomeRecord]) -> Result<Vec<&'a FimTask>> {
    let by_id: HashMap<&str, &FimTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    records
        .iter()
        .map(|r| {
            by_id
                .get(r.task_id.as_str())
                .copied()
                .ok_or_else(|| Error::Validation(format!("record for unknown task `{}`", r.task_id)))
        })
        .collect()
}

/// Fits the parameters a pre-inference policy needs.
pub fn fit_trained_params(
    policy: Policy,
    tasks: &[FimTask],
    records: &[OutcomeRecord],
    config: &RouterConfig,
) -> Result<TrainedParams> {
    if records.is_empty() {
        return Err(Error::Argument("cannot fit a router on zero calibration tasks".into()));
    }
    let aligned: Vec<FimTask> = align(tasks, records)?.into_iter().cloned().collect();
    let labels: Vec<bool> = records.iter().map(|r| r.local_passed).collect();
    let embedder = HashedTfEmbedder {
        dim: config.embedding_dim,
    };
    let embed = || aligned.iter().map(|t| embedder.embed_task(t)).collect::<Vec<_>>();
    let mut params = TrainedParams {
        embedding_dim: config.embedding_dim,
        ..TrainedParams::default()
    };
    match policy {
        Policy::StaticTree => params.tree = Some(train_tree(&aligned, &labels, config)?),
        Policy::EmbeddingKnn => params.knn = Some(build_knn_index(embed(), labels, config.knn_k)?),
        Policy::Combined => {
            let feats: Vec<_> = aligned.iter().map(extract_static_features).collect();
            params.combined = Some(CombinedIndex::build(&feats, &embed(), labels, config.knn_k)?);
        }
        Policy::EloBinary | Policy::EloTernary => params.elo = Some(compute_elo(records, embed(), config)?),
        other => {
            return Err(Error::Argument(format!("policy `{other}` has no trained parameters")));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub policy: Policy,
    pub confidence_metric: ConfidenceMetric,
    pub local_model: String,
    pub remote_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub policy: Policy,
    pub confidence_metric: ConfidenceMetric,
    pub t_star: f64,
    pub cascade_low: f64,
    pub cascade_high: f64,
    /// Empty for policies without a threshold.
    pub grid: Vec<GridPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained: Option<TrainedParams>,
    pub provenance: Provenance,
}

impl CalibrationResult {
    /// `base` with the calibrated policy, thresholds and metric applied.
    pub fn apply_to(&self, base: &RouterConfig) -> RouterConfig {
        RouterConfig {
            policy: self.policy,
            threshold: self.t_star,
            cascade_low: self.cascade_low,
            cascade_high: self.cascade_high,
            confidence_metric: self.confidence_metric,
            ..base.clone()
        }
    }
}

/// Calibrates `config.policy` on `records` (aligned with `tasks` by id).
pub fn calibrate(
    tasks: &[FimTask],
    records: &[OutcomeRecord],
    config: &RouterConfig,
    grid: &[f64],
    opts: &CalibrationOptions,
    provenance: Provenance,
) -> Result<CalibrationResult> {
    let policy = config.policy;
    let mut result = CalibrationResult {
        policy,
        confidence_metric: config.confidence_metric,
        t_star: config.threshold,
        cascade_low: config.cascade_low,
        cascade_high: config.cascade_high,
        grid: vec![],
        trained: None,
        provenance,
    };
    if policy.is_trained() {
        check_records(records, opts)?;
        result.trained = Some(fit_trained_params(policy, tasks, records, config)?);
    } else if matches!(policy, Policy::Synconf | Policy::ConfidenceOnly | Policy::Cascade) {
        let search = calibrate_threshold(records, policy, grid, opts)?;
        result.t_star = search.t_star;
        result.cascade_low = search.cascade_low;
        result.cascade_high = search.cascade_high;
        result.grid = search.points;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub format: String,
    pub version: u32,
    pub result: CalibrationResult,
}

pub fn write_artifact(result: &CalibrationResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let artifact = CalibrationArtifact {
        format: ARTIFACT_FORMAT.into(),
        version: ARTIFACT_VERSION,
        result: result.clone(),
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    serde_json::to_writer_pretty(&mut file, &artifact)?;
    file.write_all(b"\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<CalibrationResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let artifact: CalibrationArtifact = serde_json::from_str(&text)?;
    if artifact.format != ARTIFACT_FORMAT || artifact.version != ARTIFACT_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported calibration artifact `{}` v{} (expected `{ARTIFACT_FORMAT}` v{ARTIFACT_VERSION})",
            path.display(),
            artifact.format,
            artifact.version
        )));
    }
    Ok(artifact.result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub size: usize,
    pub seed: u64,
    pub t_star: f64,
    pub test_n: usize,
    pub test_passed: usize,
    pub test_pass1: f64,
    pub test_local_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub mean_pass1: f64,
    /// Sample standard deviation (n - 1); 0 for a single seed.
    pub std_pass1: f64,
    pub mean_t_star: f64,
    pub std_t_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub policy: Policy,
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
    /// Max minus min test pass@1 over all runs.
    pub pass1_spread: f64,
    /// Max minus min t* over all runs.
    pub t_star_spread: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn spread(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.fold(f64::INFINITY, f64::min);
    max - min
}

/// Recalibrates on seeded subsets of each size and evaluates on the complement.
pub fn robustness_sweep(
    records: &[OutcomeRecord],
    policy: Policy,
    sizes: &[usize],
    seeds: &[u64],
    grid: &[f64],
    opts: &CalibrationOptions,
) -> Result<SweepReport> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::Argument("robustness sweep needs at least one size and one seed".into()));
    }
    if let Some(&size) = sizes.iter().find(|&&s| s >= records.len()) {
        return Err(Error::Argument(format!(
            "calibration size {size} leaves no test tasks in a dataset of {}",
            records.len()
        )));
    }
    let mut runs = Vec::with_capacity(sizes.len() * seeds.len());
    for &size in sizes {
        for &seed in seeds {
            let (cal_idx, test_idx) = split_indices(records.len(), size, seed)?;
            let cal: Vec<OutcomeRecord> = cal_idx.iter().map(|&i| records[i].clone()).collect();
            let test: Vec<OutcomeRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
            let search = calibrate_threshold(&cal, policy, grid, opts)?;
            let th = Thresholds {
                t_star: search.t_star,
                cascade_low: search.cascade_low,
                cascade_high: search.cascade_high,
            };
            let sim = simulate(policy, &th, &test)?;
            runs.push(SweepRun {
                size,
                seed,
                t_star: search.t_star,
                test_n: sim.n,
                test_passed: sim.passed,
                test_pass1: sim.pass1(),
                test_local_rate: sim.local_rate(),
            });
        }
    }
    let rows = sizes
        .iter()
        .map(|&size| {
            let of: Vec<&SweepRun> = runs.iter().filter(|r| r.size == size).collect();
            let (mean_pass1, std_pass1) = mean_std(&of.iter().map(|r| r.test_pass1).collect::<Vec<_>>());
            let (mean_t_star, std_t_star) = mean_std(&of.iter().map(|r| r.t_star).collect::<Vec<_>>());
            SweepRow {
                size,
                mean_pass1,
                std_pass1,
                mean_t_star,
                std_t_star,
            }
        })
        .collect();
    Ok(SweepReport {
        policy,
        pass1_spread: spread(runs.iter().map(|r| r.test_pass1)),
        t_star_spread: spread(runs.iter().map(|r| r.t_star)),
        runs,
        rows,
    })
}
