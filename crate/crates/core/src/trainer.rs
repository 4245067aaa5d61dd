//! Distributed training by support-vector exchange.
//!
//! Each round is one executor job over the `L` partitions:
//!
//! - map: merge partition `l` with the current global SV set `V^{t-1}`;
//! - reduce: train an SVM on the merged set and emit its support vectors.
//!
//! The orchestrator unions every node's support vectors into `V^t`, fits the
//! global hypothesis `h^t` on `V^t` and records its hinge risk. Training stops
//! when the risk stops moving (within `epsilon`) or `V^t` stops growing.
//! Since `V^t` only grows and is bounded by `n`, the fixed point is reached
//! after at most `n` rounds.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    decode_samples, encode_samples, partition, Dataset, DatasetError, Label, Partition,
    PartitionStrategy, Sample,
};
use crate::executor::{run_rounds, JobError, JobSpec, KeyedRecord, RoundDriver, TaskError};
use crate::risk::{self, RiskError, RiskReport};
use crate::solver::{self, SolveDiagnostics, SolverError, SvmModel, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("iteration {iteration}, partition {partition}: {message}")]
    Node {
        iteration: usize,
        partition: usize,
        message: String,
    },
    #[error("iteration {iteration}: global hypothesis: {source}")]
    Global {
        iteration: usize,
        #[source]
        source: SolverError,
    },
    #[error("global support vector set is empty")]
    EmptySvSet,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Job(#[from] JobError),
    #[error("trace output: {0}")]
    Io(String),
}

/// Which rule ends training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `|R(h^t) - R(h^{t-1})| <= epsilon`.
    RiskDelta,
    /// `V^t == V^{t-1}`.
    SvSetFixedPoint,
    #[default]
    Either,
}

/// Dataset the convergence risk is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskSet {
    #[default]
    Training,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudTrainConfig {
    /// Partition (node) count `L`.
    pub l: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stop_rule: StopRule,
    #[serde(default)]
    pub partition_strategy: PartitionStrategy,
    /// Re-deal partitions every round instead of keeping them fixed.
    #[serde(default)]
    pub reshuffle_each_iteration: bool,
    /// Rounds to keep running after the stop rule first fires.
    #[serde(default)]
    pub extra_iterations: usize,
    #[serde(default)]
    pub risk_set: RiskSet,
}

fn default_epsilon() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    50
}

impl Default for CloudTrainConfig {
    fn default() -> Self {
        Self {
            l: 1,
            train: TrainConfig::default(),
            epsilon: default_epsilon(),
            max_iterations: default_max_iterations(),
            seed: 0,
            stop_rule: StopRule::default(),
            partition_strategy: PartitionStrategy::default(),
            reshuffle_each_iteration: false,
            extra_iterations: 0,
            risk_set: RiskSet::default(),
        }
    }
}

impl CloudTrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.l == 0 {
            return Err(TrainerError::Config("partition count must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(TrainerError::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(TrainerError::Config("max_iterations must be >= 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// One round's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub t: usize,
    /// Hinge risk of `h^t` on the risk set.
    pub risk: f64,
    /// Accuracy of `h^t` on the risk set.
    pub accuracy: f64,
    pub global_sv_count: usize,
    pub per_node_sv_counts: Vec<usize>,
    /// Whether `V^t` differs from `V^{t-1}`.
    pub sv_set_changed: bool,
    /// Support vectors of `h^t` itself.
    pub model_sv_count: usize,
    /// Optimal value of the dual problem on `V^t` (maximisation form). It
    /// cannot decrease as `V^t` grows, up to solver tolerance.
    pub dual_value: f64,
    /// `h^t` on the held-out set, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<RiskReport>,
}

// -- global support vector set ---------------------------------------------

/// `V^t`: support vectors keyed by sample id. A sample whose content (label
/// and exact feature values) matches a member is treated as already present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalSvSet {
    by_id: BTreeMap<u64, Sample>,
    contents: HashSet<(Label, Vec<(u32, u64)>)>,
}

impl GlobalSvSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn contains_id(&self, id: u64) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Adds `sample` unless its id or content is already present. Returns
    /// whether it was added.
    pub fn insert(&mut self, sample: Sample) -> bool {
        if let Some(existing) = self.by_id.get(&sample.id) {
            if !existing.same_content(&sample) {
                log::warn!(
                    "sample id {} seen with different content; keeping the first",
                    sample.id
                );
            }
            return false;
        }
        let content = (sample.label, sample.features.content_key());
        if !self.contents.insert(content) {
            return false;
        }
        self.by_id.insert(sample.id, sample);
        true
    }

    /// Members in id order.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.by_id.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_id.keys().copied()
    }

    pub fn to_dataset(&self, dim: usize) -> Dataset {
        Dataset::with_dim(self.samples().cloned().collect(), dim)
            .expect("ids are unique by construction")
    }
}

impl FromIterator<Sample> for GlobalSvSet {
    fn from_iter<I: IntoIterator<Item = Sample>>(iter: I) -> Self {
        let mut v = GlobalSvSet::new();
        for s in iter {
            v.insert(s);
        }
        v
    }
}

// -- the four phases --------------------------------------------------------

/// `D_l ∪ V`: the partition's samples in id order, then members of `v` not
/// already in the partition, in id order.
pub fn map_phase(p: &Partition, v: &GlobalSvSet) -> Dataset {
    let mut local: Vec<Sample> = p.data.samples().to_vec();
    local.sort_by_key(|s| s.id);
    let ids: HashSet<u64> = local.iter().map(|s| s.id).collect();
    let contents: HashSet<(Label, Vec<(u32, u64)>)> = local
        .iter()
        .map(|s| (s.label, s.features.content_key()))
        .collect();
    let extra: Vec<Sample> = v
        .samples()
        .filter(|s| {
            !ids.contains(&s.id) && !contents.contains(&(s.label, s.features.content_key()))
        })
        .cloned()
        .collect();
    let dim = p
        .data
        .dim()
        .max(extra.iter().map(|s| s.features.max_index() as usize).max().unwrap_or(0));
    local.extend(extra);
    Dataset::with_dim(local, dim).expect("ids are unique by construction")
}

/// Trains on the merged set; returns its support vectors and the node model.
pub fn reduce_phase(
    merged: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Vec<Sample>, SvmModel), SolverError> {
    let (model, _) = solver::train(merged, cfg)?;
    Ok((model.support_vectors().to_vec(), model))
}

/// `V ∪ SV_1 ∪ ... ∪ SV_L`.
pub fn merge_svs(v: &GlobalSvSet, contributions: &[Vec<Sample>]) -> GlobalSvSet {
    let mut out = v.clone();
    for svs in contributions {
        for s in svs {
            out.insert(s.clone());
        }
    }
    out
}

/// `h^t`: an SVM trained on the members of `V^t`.
pub fn global_hypothesis(
    v: &GlobalSvSet,
    cfg: &TrainConfig,
    dim: usize,
) -> Result<SvmModel, TrainerError> {
    fit_global(v, cfg, dim).map(|(model, _)| model)
}

fn fit_global(
    v: &GlobalSvSet,
    cfg: &TrainConfig,
    dim: usize,
) -> Result<(SvmModel, SolveDiagnostics), TrainerError> {
    if v.is_empty() {
        return Err(TrainerError::EmptySvSet);
    }
    Ok(solver::train(&v.to_dataset(dim), cfg)?)
}

pub fn has_converged(prev: &IterationStats, curr: &IterationStats, cfg: &CloudTrainConfig) -> bool {
    let risk_flat = (curr.risk - prev.risk).abs() <= cfg.epsilon;
    let fixed_point = !curr.sv_set_changed;
    match cfg.stop_rule {
        StopRule::RiskDelta => risk_flat,
        StopRule::SvSetFixedPoint => fixed_point,
        StopRule::Either => risk_flat || fixed_point,
    }
}

// -- orchestration ----------------------------------------------------------

/// Optional inputs to [`cloud_train_with`].
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Evaluated every round; required when `risk_set` is `Holdout`.
    pub holdout: Option<&'a Dataset>,
    /// Executor workers; defaults to the partition count.
    pub parallelism: Option<usize>,
    /// Called after every round.
    pub observer: Option<&'a (dyn Fn(&IterationStats) + Sync)>,
}

#[derive(Debug, Clone)]
pub struct CloudTrainOutcome {
    /// Hypothesis of the last round run.
    pub model: SvmModel,
    pub trace: Vec<IterationStats>,
    pub converged: bool,
    /// Round at which the stop rule first fired.
    pub converged_at: Option<usize>,
    /// Final global support vector set.
    pub global_svs: GlobalSvSet,
}

pub fn cloud_train(ds: &Dataset, cfg: &CloudTrainConfig) -> Result<CloudTrainOutcome, TrainerError> {
    cloud_train_with(ds, cfg, &RunOptions::default())
}

pub fn cloud_train_with(
    ds: &Dataset,
    cfg: &CloudTrainConfig,
    opts: &RunOptions<'_>,
) -> Result<CloudTrainOutcome, TrainerError> {
    cfg.validate()?;
    if !ds.has_both_classes() {
        let (negative, positive) = ds.class_counts();
        return Err(SolverError::SingleClass { negative, positive }.into());
    }
    if cfg.risk_set == RiskSet::Holdout && opts.holdout.is_none() {
        return Err(TrainerError::Config(
            "risk_set = holdout needs a holdout dataset".into(),
        ));
    }
    let partitions = partition(ds, cfg.l, cfg.seed, cfg.partition_strategy)?;
    let mut driver = CloudDriver {
        ds,
        cfg,
        opts,
        partitions,
        converged_at: None,
    };
    let initial = CloudState {
        v: GlobalSvSet::new(),
        model: None,
    };
    match run_rounds(&mut driver, initial, cfg.max_iterations) {
        Ok(outcome) => Ok(CloudTrainOutcome {
            model: outcome.state.model.expect("at least one round ran"),
            trace: outcome.trace,
            converged: driver.converged_at.is_some(),
            converged_at: driver.converged_at,
            global_svs: outcome.state.v,
        }),
        Err(failure) => Err(match failure.error {
            TrainerError::Job(job) => TrainerError::Node {
                iteration: failure.round,
                partition: decode_node_key(&job.key),
                message: format!("{} phase: {}", job.phase, job.source),
            },
            other => other,
        }),
    }
}

struct CloudState {
    v: GlobalSvSet,
    model: Option<SvmModel>,
}

struct CloudDriver<'a> {
    ds: &'a Dataset,
    cfg: &'a CloudTrainConfig,
    opts: &'a RunOptions<'a>,
    partitions: Vec<Partition>,
    converged_at: Option<usize>,
}

fn node_key(index: usize) -> Vec<u8> {
    (index as u32).to_be_bytes().to_vec()
}

fn decode_node_key(key: &[u8]) -> usize {
    key.try_into().map(u32::from_be_bytes).map_or(0, |k| k as usize)
}

fn utf8(bytes: &[u8]) -> Result<&str, TaskError> {
    Ok(std::str::from_utf8(bytes)?)
}

impl RoundDriver for CloudDriver<'_> {
    type State = CloudState;
    type Summary = IterationStats;
    type Error = TrainerError;

    fn build<'s>(
        &'s self,
        round: usize,
        state: &'s CloudState,
    ) -> Result<(Vec<KeyedRecord>, JobSpec<'s>), TrainerError> {
        let reshuffled;
        let partitions = if self.cfg.reshuffle_each_iteration && round > 1 {
            let seed = self.cfg.seed.wrapping_add(round as u64 - 1);
            reshuffled = partition(self.ds, self.cfg.l, seed, self.cfg.partition_strategy)?;
            &reshuffled
        } else {
            &self.partitions
        };
        let inputs = partitions
            .iter()
            .map(|p| KeyedRecord::new(node_key(p.index), encode_samples(p.data.samples())))
            .collect();

        let broadcast = encode_samples(state.v.samples());
        let dim = self.ds.dim();
        let train_cfg = &self.cfg.train;
        let map = move |rec: &KeyedRecord| -> Result<Vec<KeyedRecord>, TaskError> {
            let data = Dataset::with_dim(decode_samples(utf8(&rec.value)?)?, dim)?;
            let v: GlobalSvSet = decode_samples(&broadcast)?.into_iter().collect();
            let p = Partition {
                index: decode_node_key(&rec.key),
                data,
            };
            let merged = map_phase(&p, &v);
            Ok(vec![KeyedRecord::new(
                rec.key.clone(),
                encode_samples(merged.samples()),
            )])
        };
        let reduce = move |key: &[u8], values: &[Vec<u8>]| -> Result<Vec<KeyedRecord>, TaskError> {
            let mut out = Vec::with_capacity(values.len());
            for value in values {
                let merged = Dataset::with_dim(decode_samples(utf8(value)?)?, dim)?;
                let (svs, _) = reduce_phase(&merged, train_cfg)?;
                out.push(KeyedRecord::new(key.to_vec(), encode_samples(&svs)));
            }
            Ok(out)
        };
        let mut job = JobSpec::new(map, reduce);
        if let Some(p) = self.opts.parallelism {
            job = job.with_parallelism(p);
        }
        Ok((inputs, job))
    }

    fn fold(
        &mut self,
        round: usize,
        state: CloudState,
        output: Vec<KeyedRecord>,
    ) -> Result<(CloudState, IterationStats), TrainerError> {
        let mut contributions = Vec::with_capacity(output.len());
        for rec in &output {
            let text = std::str::from_utf8(&rec.value).map_err(|e| TrainerError::Node {
                iteration: round,
                partition: decode_node_key(&rec.key),
                message: e.to_string(),
            })?;
            contributions.push(decode_samples(text)?);
        }
        let per_node_sv_counts = contributions.iter().map(Vec::len).collect();
        let v = merge_svs(&state.v, &contributions);
        let sv_set_changed = v.len() != state.v.len();

        let (model, diag) = fit_global(&v, &self.cfg.train, self.ds.dim()).map_err(|e| match e {
            TrainerError::Solver(source) => TrainerError::Global {
                iteration: round,
                source,
            },
            other => other,
        })?;
        let holdout = self
            .opts
            .holdout
            .map(|h| risk::evaluate(&model, h))
            .transpose()?;
        let on_risk_set = match (self.cfg.risk_set, holdout) {
            (RiskSet::Holdout, Some(h)) => h,
            _ => risk::evaluate(&model, self.ds)?,
        };
        let stats = IterationStats {
            t: round,
            risk: on_risk_set.empirical_risk,
            accuracy: on_risk_set.accuracy,
            global_sv_count: v.len(),
            per_node_sv_counts,
            sv_set_changed,
            model_sv_count: model.support_vectors().len(),
            dual_value: -diag.dual_objective,
            holdout,
        };
        if let Some(observe) = self.opts.observer {
            observe(&stats);
        }
        Ok((
            CloudState {
                v,
                model: Some(model),
            },
            stats,
        ))
    }

    fn should_stop(&mut self, prev: Option<&IterationStats>, curr: &IterationStats) -> bool {
        if self.converged_at.is_none() {
            if let Some(prev) = prev {
                if has_converged(prev, curr, self.cfg) {
                    self.converged_at = Some(curr.t);
                }
            }
        }
        self.converged_at
            .map_or(false, |c| curr.t >= c + self.cfg.extra_iterations)
    }
}

/// Writes `t,risk,accuracy,global_sv_count,per_node_sv_counts` rows; the last
/// column is a JSON array. With `holdout`, a `holdout_accuracy` column is
/// appended.
pub fn write_trace_csv<W: Write>(
    trace: &[IterationStats],
    out: W,
    holdout: bool,
) -> Result<(), TrainerError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| TrainerError::Io(e.to_string());
    let mut header = vec!["t", "risk", "accuracy", "global_sv_count", "per_node_sv_counts"];
    if holdout {
        header.push("holdout_accuracy");
    }
    w.write_record(&header).map_err(io)?;
    for s in trace {
        let mut row = vec![
            s.t.to_string(),
            s.risk.to_string(),
            s.accuracy.to_string(),
            s.global_sv_count.to_string(),
            serde_json::to_string(&s.per_node_sv_counts).expect("counts serialise"),
        ];
        if holdout {
            row.push(s.holdout.map(|h| h.accuracy.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| TrainerError::Io(e.to_string()))?;
    Ok(())
}
