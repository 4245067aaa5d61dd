//! Cross-validated experiments: k-fold CV of distributed training, a (C, γ)
//! grid search and the report files.
//!
//! Output files written to the output directory:
//!
//! - `report.json`: configuration echo, grid scores, per-fold rows,
//!   aggregates and full iteration traces;
//! - `folds.csv`: one row per fold;
//! - `trace_fold<i>.csv`: the per-round trace of fold `i` with the held-out
//!   accuracy of every intermediate hypothesis.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{
    kfold_split, parse_csv, parse_libsvm, CsvOptions, Dataset, DatasetError, LabelMapping,
    ScalingMode, ScalingParams,
};
use crate::trainer::{
    cloud_train_with, write_trace_csv, CloudTrainConfig, IterationStats, RunOptions, TrainerError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid experiment config: {}", .0.join("; "))]
    Schema(Vec<String>),
    #[error("{path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error(transparent)]
    Split(#[from] DatasetError),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: TrainerError,
    },
    #[error("fold {fold}: test sample {id} leaked into training")]
    Leak { fold: usize, id: u64 },
    #[error("invalid experiment: {0}")]
    Config(String),
}

fn io_err(path: &Path, e: impl ToString) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

// -- configuration ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    pub format: DataFormat,
    /// CSV only; 0-based. Defaults to the first column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<usize>,
    #[serde(default)]
    pub has_header: bool,
    #[serde(default = "strict")]
    pub labels: LabelMapping,
}

fn strict() -> LabelMapping {
    LabelMapping::Strict
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, ExperimentError> {
        let text = fs::read_to_string(&self.path).map_err(|e| io_err(&self.path, e))?;
        let parsed = match self.format {
            DataFormat::Libsvm => parse_libsvm(&text, self.labels),
            DataFormat::Csv => parse_csv(
                &text,
                &CsvOptions {
                    label_column: Some(self.label_column.unwrap_or(0)),
                    has_header: self.has_header,
                    mapping: self.labels,
                },
            ),
        };
        parsed.map_err(|source| ExperimentError::Dataset {
            path: self.path.clone(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "default_grid_c")]
    pub c: Vec<f64>,
    #[serde(default = "default_grid_gamma")]
    pub gamma: Vec<f64>,
}

fn default_grid_c() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0, 100.0]
}
fn default_grid_gamma() -> Vec<f64> {
    vec![1.0]
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            c: default_grid_c(),
            gamma: default_grid_gamma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub gamma: f64,
}

impl Grid {
    /// Candidate points in ascending (C, γ) order. Linear kernels ignore γ,
    /// so only the smallest γ is kept for them.
    pub fn points(&self, linear: bool) -> Vec<GridPoint> {
        let mut cs = self.c.clone();
        let mut gammas = self.gamma.clone();
        cs.sort_by(f64::total_cmp);
        cs.dedup();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        if linear {
            gammas.truncate(1);
        }
        cs.iter()
            .flat_map(|&c| gammas.iter().map(move |&gamma| GridPoint { c, gamma }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub scaling: ScalingMode,
    /// Its `seed` is replaced by the experiment seed.
    pub cloud: CloudTrainConfig,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

fn default_folds() -> usize {
    10
}

const TOP_KEYS: &[&str] = &[
    "dataset", "scaling", "cloud", "cv_folds", "grid", "seed", "output_dir", "parallelism",
];
const DATASET_KEYS: &[&str] = &["path", "format", "label_column", "has_header", "labels"];
const CLOUD_KEYS: &[&str] = &[
    "l",
    "train",
    "epsilon",
    "max_iterations",
    "seed",
    "stop_rule",
    "partition_strategy",
    "reshuffle_each_iteration",
    "extra_iterations",
    "risk_set",
];
const TRAIN_KEYS: &[&str] = &[
    "c",
    "kernel",
    "kkt_tol",
    "sv_threshold",
    "max_passes",
    "cache_budget",
    "working_set",
];
const KERNEL_KEYS: &[&str] = &["kind", "gamma", "degree", "coef0"];
const GRID_KEYS: &[&str] = &["c", "gamma"];

fn unknown_keys(value: &Value, allowed: &[&str], prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = value {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                out.push(format!("unknown field `{prefix}{key}`"));
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; every unknown field is reported, not only the
    /// first one.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ExperimentError::Schema(vec![e.to_string()]))?;
        if !value.is_object() {
            return Err(ExperimentError::Schema(vec!["expected a JSON object".into()]));
        }
        let mut problems = Vec::new();
        unknown_keys(&value, TOP_KEYS, "", &mut problems);
        unknown_keys(&value["dataset"], DATASET_KEYS, "dataset.", &mut problems);
        unknown_keys(&value["grid"], GRID_KEYS, "grid.", &mut problems);
        let cloud = &value["cloud"];
        unknown_keys(cloud, CLOUD_KEYS, "cloud.", &mut problems);
        unknown_keys(&cloud["train"], TRAIN_KEYS, "cloud.train.", &mut problems);
        unknown_keys(&cloud["train"]["kernel"], KERNEL_KEYS, "cloud.train.kernel.", &mut problems);
        if !problems.is_empty() {
            return Err(ExperimentError::Schema(problems));
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| ExperimentError::Schema(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative dataset and output paths are resolved against
    /// the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        if path.is_dir() {
            return Err(io_err(path, "is a directory, expected a JSON file"));
        }
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.path.is_relative() {
            cfg.dataset.path = base.join(&cfg.dataset.path);
        }
        if let Some(out) = &cfg.output_dir {
            if out.is_relative() {
                cfg.output_dir = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let mut problems = Vec::new();
        if self.cv_folds < 2 {
            problems.push(format!("cv_folds must be >= 2, got {}", self.cv_folds));
        }
        if self.grid.c.is_empty() || self.grid.gamma.is_empty() {
            problems.push("grid.c and grid.gamma must be non-empty".to_string());
        }
        if self.grid.c.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            problems.push("grid.c values must be finite and > 0".to_string());
        }
        if self.grid.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            problems.push("grid.gamma values must be finite and > 0".to_string());
        }
        if self.parallelism == Some(0) {
            problems.push("parallelism must be >= 1".to_string());
        }
        if let Err(e) = self.cloud.validate() {
            problems.push(format!("cloud: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Schema(problems))
        }
    }
}

// -- cross-validation -------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    pub scaling: ScalingMode,
    pub parallelism: Option<usize>,
    /// Evaluate every intermediate hypothesis on the test fold.
    pub track_holdout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Round at which the stop rule fired, or the rounds run if it never did.
    pub iterations: usize,
    pub converged: bool,
    /// Final global support vector count.
    pub sv_count: usize,
    pub model_sv_count: usize,
    pub trace: Vec<IterationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    /// Correct test predictions over all folds divided by `n`.
    pub pooled_accuracy: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    pub mean_iterations: f64,
    pub mean_sv_count: f64,
    pub correct: usize,
    pub n: usize,
}

impl CvSummary {
    pub fn from_folds(folds: &[FoldResult]) -> Self {
        let k = folds.len() as f64;
        let correct = folds.iter().map(|f| f.correct).sum();
        let n = folds.iter().map(|f| f.test_size).sum();
        let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / k;
        let var = if folds.len() > 1 {
            folds
                .iter()
                .map(|f| (f.accuracy - mean_accuracy).powi(2))
                .sum::<f64>()
                / (k - 1.0)
        } else {
            0.0
        };
        Self {
            pooled_accuracy: correct as f64 / n as f64,
            mean_accuracy,
            std_accuracy: var.sqrt(),
            mean_iterations: folds.iter().map(|f| f.iterations as f64).sum::<f64>() / k,
            mean_sv_count: folds.iter().map(|f| f.sv_count as f64).sum::<f64>() / k,
            correct,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
}

/// Stratified k-fold CV of distributed training. Scaling is fit on each
/// training fold and applied to its test fold.
pub fn cross_validate(
    ds: &Dataset,
    cloud_cfg: &CloudTrainConfig,
    k: usize,
    seed: u64,
    opts: &CvOptions,
) -> Result<CvResult, ExperimentError> {
    let splits = kfold_split(ds, k, seed, true)?;
    let mut folds = Vec::with_capacity(k);
    for (i, split) in splits.iter().enumerate() {
        let fold = i + 1;
        let test_ids: HashSet<u64> = split.test.ids().collect();
        if let Some(id) = split.train.ids().find(|id| test_ids.contains(id)) {
            return Err(ExperimentError::Leak { fold, id });
        }
        let params = ScalingParams::fit(&split.train, opts.scaling);
        let train = params.apply(&split.train);
        let test = params.apply(&split.test);
        let run = RunOptions {
            holdout: opts.track_holdout.then_some(&test),
            parallelism: opts.parallelism,
            observer: None,
        };
        let outcome = cloud_train_with(&train, cloud_cfg, &run)
            .map_err(|source| ExperimentError::Fold { fold, source })?;
        if let Some(id) = outcome.global_svs.ids().find(|id| test_ids.contains(id)) {
            return Err(ExperimentError::Leak { fold, id });
        }
        let report = crate::risk::evaluate(&outcome.model, &test)
            .map_err(|e| ExperimentError::Fold { fold, source: e.into() })?;
        log::info!(
            "fold {fold}/{k}: accuracy {:.4} after {} rounds, {} global SVs",
            report.accuracy,
            outcome.trace.len(),
            outcome.global_svs.len()
        );
        folds.push(FoldResult {
            fold,
            train_size: train.len(),
            test_size: test.len(),
            correct: report.correct,
            accuracy: report.accuracy,
            iterations: outcome.converged_at.unwrap_or(outcome.trace.len()),
            converged: outcome.converged,
            sv_count: outcome.global_svs.len(),
            model_sv_count: outcome.model.support_vectors().len(),
            trace: outcome.trace,
        });
    }
    let summary = CvSummary::from_folds(&folds);
    Ok(CvResult { folds, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub c: f64,
    pub gamma: f64,
    pub pooled_accuracy: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: GridPoint,
    pub scores: Vec<GridScore>,
    /// The CV run at `best`.
    pub best_cv: CvResult,
}

/// Cross-validates every grid point; the highest pooled accuracy wins, ties
/// going to the smaller C and then the smaller γ.
pub fn grid_search(
    ds: &Dataset,
    cloud_cfg: &CloudTrainConfig,
    grid: &Grid,
    k: usize,
    seed: u64,
    opts: &CvOptions,
) -> Result<GridSearchResult, ExperimentError> {
    let points = grid.points(cloud_cfg.train.kernel.is_linear());
    if points.is_empty() {
        return Err(ExperimentError::Config("empty grid".into()));
    }
    let mut scores = Vec::with_capacity(points.len());
    let mut best: Option<(GridPoint, CvResult)> = None;
    for point in points {
        let mut cfg = cloud_cfg.clone();
        cfg.train.c = point.c;
        cfg.train.kernel = cfg.train.kernel.with_gamma(point.gamma);
        let cv = cross_validate(ds, &cfg, k, seed, opts)?;
        log::info!(
            "grid C={} gamma={}: pooled accuracy {:.4}",
            point.c,
            point.gamma,
            cv.summary.pooled_accuracy
        );
        scores.push(GridScore {
            c: point.c,
            gamma: point.gamma,
            pooled_accuracy: cv.summary.pooled_accuracy,
            mean_accuracy: cv.summary.mean_accuracy,
        });
        let better = best
            .as_ref()
            .map_or(true, |(_, b)| cv.summary.pooled_accuracy > b.summary.pooled_accuracy);
        if better {
            best = Some((point, cv));
        }
    }
    let (best, best_cv) = best.expect("grid is non-empty");
    Ok(GridSearchResult {
        best,
        scores,
        best_cv,
    })
}

// -- full experiment --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sv_count: usize,
    pub model_sv_count: usize,
}

impl From<&FoldResult> for FoldRow {
    fn from(f: &FoldResult) -> Self {
        Self {
            fold: f.fold,
            train_size: f.train_size,
            test_size: f.test_size,
            correct: f.correct,
            accuracy: f.accuracy,
            iterations: f.iterations,
            converged: f.converged,
            sv_count: f.sv_count,
            model_sv_count: f.model_sv_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub n: usize,
    pub dim: usize,
    pub negatives: usize,
    pub positives: usize,
    pub cv_folds: usize,
    pub seed: u64,
    pub scaling: ScalingMode,
    pub cloud: CloudTrainConfig,
    pub chosen: GridPoint,
    pub grid: Vec<GridScore>,
    pub folds: Vec<FoldRow>,
    pub aggregate: CvSummary,
    /// Trace of every fold, in fold order.
    pub traces: Vec<Vec<IterationStats>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub folds: Vec<FoldResult>,
    /// Files written, in write order.
    pub artifacts: Vec<PathBuf>,
}

/// Grid search, then the report for the chosen point. Files are written
/// when `output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let ds = cfg.dataset.load()?;
    let mut cloud = cfg.cloud.clone();
    cloud.seed = cfg.seed;
    let opts = CvOptions {
        scaling: cfg.scaling,
        parallelism: cfg.parallelism,
        track_holdout: true,
    };
    let search = grid_search(&ds, &cloud, &cfg.grid, cfg.cv_folds, cfg.seed, &opts)?;
    let mut chosen_cloud = cloud;
    chosen_cloud.train.c = search.best.c;
    chosen_cloud.train.kernel = chosen_cloud.train.kernel.with_gamma(search.best.gamma);
    let (negatives, positives) = ds.class_counts();
    let folds = search.best_cv.folds;
    let report = ExperimentReport {
        dataset: cfg
            .dataset
            .path
            .file_name()
            .map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
        n: ds.len(),
        dim: ds.dim(),
        negatives,
        positives,
        cv_folds: cfg.cv_folds,
        seed: cfg.seed,
        scaling: cfg.scaling,
        cloud: chosen_cloud,
        chosen: search.best,
        grid: search.scores,
        folds: folds.iter().map(FoldRow::from).collect(),
        aggregate: search.best_cv.summary,
        traces: folds.iter().map(|f| f.trace.clone()).collect(),
    };
    let artifacts = match &cfg.output_dir {
        Some(dir) => write_artifacts(&report, &folds, dir)?,
        None => Vec::new(),
    };
    Ok(ExperimentOutcome {
        report,
        folds,
        artifacts,
    })
}

/// Writes `report.json`, `folds.csv` and `trace_fold<i>.csv` under `dir`.
pub fn write_artifacts(
    report: &ExperimentReport,
    folds: &[FoldResult],
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serialises");
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    written.push(path);

    let path = dir.join("folds.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    for f in folds {
        w.serialize(FoldRow::from(f)).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    written.push(path);

    for f in folds {
        let path = dir.join(format!("trace_fold{}.csv", f.fold));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_trace_csv(&f.trace, file, true).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
