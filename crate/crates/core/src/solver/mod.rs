//! Soft-margin SVM training on the dual problem by SMO.

mod model;
mod smo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Label, SparseVector};
use crate::kernel::{KernelError, KernelSpec, QMatrix, QRows};

pub use model::SvmModel;
pub use smo::{kkt_gap, QSource, WorkingSetSelection};

use smo::Smo;

/// Minimum number of SMO steps regardless of problem size.
const MIN_STEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("training set needs both classes (got {negative} negative, {positive} positive)")]
    SingleClass { negative: usize, positive: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("solver did not reach KKT tolerance after {} steps (violation {})",
            .diagnostics.iterations, .diagnostics.max_kkt_violation)]
    NotConverged { diagnostics: SolveDiagnostics },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Box bound `C`.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    /// Stop once the maximal KKT violation is at most this.
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    /// A sample is a support vector when its multiplier exceeds this.
    #[serde(default = "default_sv_threshold")]
    pub sv_threshold: f64,
    /// Step budget in passes of `n` steps; defaults to `10 n`.
    #[serde(default)]
    pub max_passes: Option<usize>,
    /// Bytes available for cached `Q` rows.
    #[serde(default = "default_cache_budget")]
    pub cache_budget: usize,
    #[serde(default)]
    pub working_set: WorkingSetSelection,
}

fn default_c() -> f64 {
    1.0
}
fn default_kernel() -> KernelSpec {
    KernelSpec::Linear
}
fn default_kkt_tol() -> f64 {
    1e-3
}
fn default_sv_threshold() -> f64 {
    1e-8
}
fn default_cache_budget() -> usize {
    256 << 20
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: KernelSpec::Linear,
            kkt_tol: default_kkt_tol(),
            sv_threshold: default_sv_threshold(),
            max_passes: None,
            cache_budget: default_cache_budget(),
            working_set: WorkingSetSelection::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_kkt_tol(mut self, tol: f64) -> Self {
        self.kkt_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SolverError::Config(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(SolverError::Config(format!(
                "kkt_tol must be > 0, got {}",
                self.kkt_tol
            )));
        }
        if !(self.sv_threshold > 0.0 && self.sv_threshold < self.c) {
            return Err(SolverError::Config(format!(
                "sv_threshold must be in (0, C), got {}",
                self.sv_threshold
            )));
        }
        if self.max_passes == Some(0) {
            return Err(SolverError::Config("max_passes must be >= 1".into()));
        }
        self.kernel.validate()?;
        Ok(())
    }

    fn max_steps(&self, n: usize) -> usize {
        let passes = self.max_passes.unwrap_or(10 * n);
        passes.saturating_mul(n).max(MIN_STEPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// `F(a) = 1/2 a'Qa - sum a` at the returned point (minimisation form).
    pub dual_objective: f64,
    /// SMO steps taken.
    pub iterations: usize,
    pub max_kkt_violation: f64,
}

/// Everything the solver produced, including the full multiplier vector
/// (parallel to the training samples).
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: SvmModel,
    pub diagnostics: SolveDiagnostics,
    pub alphas: Vec<f64>,
}

/// Trains on `ds` and keeps the samples whose multiplier exceeds
/// `cfg.sv_threshold` as support vectors.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(SvmModel, SolveDiagnostics), SolverError> {
    let out = train_detailed(ds, cfg)?;
    Ok((out.model, out.diagnostics))
}

pub fn train_detailed(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, SolverError> {
    run(ds, cfg, None)
}

/// Like [`train_detailed`], calling `on_step` with the objective after every
/// SMO step.
pub fn train_observed(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(f64),
) -> Result<TrainOutput, SolverError> {
    run(ds, cfg, Some(&mut on_step))
}

fn run(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_step: Option<&mut dyn FnMut(f64)>,
) -> Result<TrainOutput, SolverError> {
    cfg.validate()?;
    let (negative, positive) = ds.class_counts();
    if negative == 0 || positive == 0 {
        return Err(SolverError::SingleClass { negative, positive });
    }
    let samples = ds.samples();
    let n = samples.len();
    let q = QRows::new(cfg.kernel, samples, cfg.cache_budget)?;
    let y: Vec<f64> = samples.iter().map(|s| s.label.value()).collect();
    let mut smo = Smo::new(&q, y, cfg.c, cfg.working_set);

    let max_steps = cfg.max_steps(n);
    let mut steps = 0;
    while let Some((i, j, _)) = smo.select(cfg.kkt_tol) {
        if steps == max_steps {
            return Err(SolverError::NotConverged {
                diagnostics: SolveDiagnostics {
                    dual_objective: smo.objective(),
                    iterations: steps,
                    max_kkt_violation: smo.gap(),
                },
            });
        }
        smo.step(i, j);
        steps += 1;
        if let Some(f) = on_step.as_mut() {
            f(smo.objective());
        }
    }

    let diagnostics = SolveDiagnostics {
        dual_objective: smo.objective(),
        iterations: steps,
        max_kkt_violation: smo.gap(),
    };
    let bias = smo.bias();
    let alphas = smo.alpha;
    let mut svs = Vec::new();
    let mut coefs = Vec::new();
    for (s, &a) in samples.iter().zip(&alphas) {
        if a > cfg.sv_threshold {
            svs.push(s.clone());
            coefs.push(a * s.label.value());
        }
    }
    let model = SvmModel::new(svs, coefs, bias, cfg.kernel, ds.dim())?;
    Ok(TrainOutput {
        model,
        diagnostics,
        alphas,
    })
}

/// `f(x) = sum_i c_i K(sv_i, x) + b`.
pub fn decision(model: &SvmModel, x: &SparseVector) -> f64 {
    model.decision(x)
}

/// Sign of [`decision`]; ties at exactly zero go to `+1`.
pub fn predict(model: &SvmModel, x: &SparseVector) -> Label {
    model.predict(x)
}

/// `1/2 a'Qa - sum a`.
pub fn dual_objective(alphas: &[f64], q: &QMatrix) -> Result<f64, SolverError> {
    if alphas.len() != q.dim() {
        return Err(SolverError::Dimension(format!(
            "{} multipliers for a {}x{} matrix",
            alphas.len(),
            q.dim(),
            q.dim()
        )));
    }
    let mut quad = 0.0;
    for (i, &ai) in alphas.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = q.row(i);
        quad += ai * alphas.iter().zip(row).map(|(a, r)| a * r).sum::<f64>();
    }
    Ok(0.5 * quad - alphas.iter().sum::<f64>())
}

/// Largest KKT violation of a (possibly partial) dual solution given its
/// gradient `G = Qa - 1`.
pub fn kkt_max_violation(alphas: &[f64], gradient: &[f64], labels: &[Label], c: f64) -> f64 {
    let y: Vec<f64> = labels.iter().map(|l| l.value()).collect();
    kkt_gap(alphas, gradient, &y, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    fn point(id: u64, x: &[f64], positive: bool) -> Sample {
        Sample::new(id, SparseVector::from_dense(x).unwrap(), Label::from_sign(positive))
    }

    fn pair() -> Dataset {
        Dataset::with_dim(vec![point(0, &[1.0], true), point(1, &[-1.0], false)], 1).unwrap()
    }

    fn xor() -> Dataset {
        Dataset::with_dim(
            vec![
                point(0, &[0.0, 0.0], false),
                point(1, &[1.0, 1.0], false),
                point(2, &[0.0, 1.0], true),
                point(3, &[1.0, 0.0], true),
            ],
            2,
        )
        .unwrap()
    }

    /// Dual objective of the 1-D pair on a grid over feasible `(a1, a2)`.
    /// The equality constraint forces `a1 = a2`, so the grid is the diagonal.
    fn pair_grid_optimum(c: f64) -> (f64, f64) {
        let q = QMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=10_000 {
            let a = c * k as f64 / 10_000.0;
            let f = dual_objective(&[a, a], &q).unwrap();
            if f < best.0 {
                best = (f, a);
            }
        }
        best
    }

    #[test]
    fn analytic_pair() {
        let (f_grid, a_grid) = pair_grid_optimum(10.0);
        assert_eq!(a_grid, 0.5);
        assert_eq!(f_grid, -0.5);

        let cfg = TrainConfig::default().with_c(10.0);
        let out = train_detailed(&pair(), &cfg).unwrap();
        assert_eq!(out.alphas, [0.5, 0.5]);
        assert_eq!(out.model.support_vectors().len(), 2);
        assert_eq!(out.model.dual_coefs(), [0.5, -0.5]);
        assert_eq!(out.model.bias(), 0.0);
        assert_eq!(out.model.linear_weights().unwrap(), [1.0]);
        assert_eq!(out.diagnostics.dual_objective, -0.5);
        assert!(out.diagnostics.max_kkt_violation <= 1e-9);

        let m = &out.model;
        let at = |x: f64| m.decision(&SparseVector::from_dense(&[x]).unwrap());
        assert_eq!(at(0.0), 0.0);
        assert_eq!(at(1.0), 1.0);
        assert_eq!(at(-1.0), -1.0);
        assert_eq!(m.predict(&SparseVector::default()), Label::Positive);
    }

    /// Projected gradient on the 4x4 XOR dual. The projection onto
    /// `{0 <= a <= C, y'a = 0}` bisects on the multiplier of the equality.
    fn xor_oracle(q: &QMatrix, y: &[f64], c: f64) -> Vec<f64> {
        let n = y.len();
        let project = |v: &[f64]| -> Vec<f64> {
            let at = |lam: f64| -> Vec<f64> {
                v.iter().zip(y).map(|(x, yi)| (x - lam * yi).clamp(0.0, c)).collect()
            };
            let (mut lo, mut hi) = (-1e3, 1e3);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let s: f64 = at(mid).iter().zip(y).map(|(a, yi)| a * yi).sum();
                if s > 0.0 { lo = mid } else { hi = mid }
            }
            at(0.5 * (lo + hi))
        };
        let mut a = vec![0.0; n];
        for _ in 0..200_000 {
            let g: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| q.get(i, j) * a[j]).sum::<f64>() - 1.0)
                .collect();
            let v: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x - 0.2 * gi).collect();
            a = project(&v);
        }
        a
    }

    #[test]
    fn xor_with_rbf() {
        let ds = xor();
        let spec = KernelSpec::Rbf { gamma: 1.0 };
        let q = QMatrix::from_samples(&spec, ds.samples());
        let y: Vec<f64> = ds.samples().iter().map(|s| s.label.value()).collect();
        let oracle = xor_oracle(&q, &y, 10.0);
        let f_oracle = dual_objective(&oracle, &q).unwrap();
        assert!(oracle.iter().all(|&a| a > 1e-3), "{oracle:?}");

        let cfg = TrainConfig::default().with_c(10.0).with_kernel(spec).with_kkt_tol(1e-8);
        let out = train_detailed(&ds, &cfg).unwrap();
        assert_eq!(out.model.support_vectors().len(), 4);
        assert!((out.diagnostics.dual_objective - f_oracle).abs() < 1e-6);
        for s in ds.samples() {
            assert_eq!(out.model.predict(&s.features), s.label);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let ds = Dataset::new(vec![point(0, &[1.0], true), point(1, &[2.0], true)]).unwrap();
        assert_eq!(
            train(&ds, &TrainConfig::default()).unwrap_err(),
            SolverError::SingleClass { negative: 0, positive: 2 }
        );
    }

    #[test]
    fn exhausted_step_budget_reports_diagnostics() {
        let ds = xor();
        let cfg = TrainConfig {
            max_passes: Some(1),
            kkt_tol: 1e-300,
            kernel: KernelSpec::Rbf { gamma: 1.0 },
            ..TrainConfig::default()
        };
        match train(&ds, &cfg) {
            Err(SolverError::NotConverged { diagnostics }) => {
                assert_eq!(diagnostics.iterations, MIN_STEPS);
                assert!(diagnostics.dual_objective < 0.0);
            }
            // an exact optimum can be hit in finitely many steps
            Ok((_, d)) => assert_eq!(d.max_kkt_violation, 0.0),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig::default().with_c(0.0),
            TrainConfig::default().with_kkt_tol(0.0),
            TrainConfig { sv_threshold: 2.0, ..TrainConfig::default() },
            TrainConfig::default().with_kernel(KernelSpec::Rbf { gamma: -1.0 }),
        ];
        for cfg in bad {
            assert!(matches!(train(&pair(), &cfg), Err(SolverError::Config(_)) | Err(SolverError::Kernel(_))));
        }
    }

    #[test]
    fn dual_objective_values() {
        let q = QMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(dual_objective(&[0.0, 0.0], &q).unwrap(), 0.0);
        assert_eq!(dual_objective(&[1.0, 0.0], &q).unwrap(), 0.0);
        let q = QMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(dual_objective(&[0.5, 0.5], &q).unwrap(), -0.5);
        assert!(matches!(dual_objective(&[1.0], &q), Err(SolverError::Dimension(_))));
    }

    #[test]
    fn kkt_violation_values() {
        let labels = [Label::Positive, Label::Negative];
        // analytic optimum: G = Qa - 1 = 0
        assert!(kkt_max_violation(&[0.5, 0.5], &[0.0, 0.0], &labels, 10.0) <= 1e-9);
        assert!(kkt_max_violation(&[0.0, 0.0], &[-1.0, -1.0], &labels, 10.0) >= 1.0);
        assert_eq!(kkt_max_violation(&[], &[], &[], 1.0), 0.0);
    }

    #[test]
    fn empty_model_decision_is_bias() {
        let m = SvmModel::new(vec![], vec![], 0.3, KernelSpec::Rbf { gamma: 1.0 }, 2).unwrap();
        assert_eq!(decision(&m, &SparseVector::from_dense(&[1.0, 2.0]).unwrap()), 0.3);
    }

    #[test]
    fn predict_tie_break() {
        let bias_model = |b: f64| SvmModel::new(vec![], vec![], b, KernelSpec::Linear, 1).unwrap();
        let x = SparseVector::default();
        assert_eq!(predict(&bias_model(0.7), &x), Label::Positive);
        assert_eq!(predict(&bias_model(-0.2), &x), Label::Negative);
        assert_eq!(predict(&bias_model(0.0), &x), Label::Positive);
    }

    #[test]
    fn objective_never_increases() {
        let mut samples = Vec::new();
        for i in 0..40u64 {
            let t = i as f64 * 0.37;
            let pos = i % 2 == 0;
            let shift = if pos { 0.4 } else { -0.4 };
            samples.push(point(i, &[t.sin() + shift, (1.7 * t).cos() - shift], pos));
        }
        let ds = Dataset::new(samples).unwrap();
        for spec in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 2.0 }] {
            for ws in [WorkingSetSelection::MaximalViolatingPair, WorkingSetSelection::SecondOrder] {
                let cfg = TrainConfig { working_set: ws, ..TrainConfig::default().with_kernel(spec).with_c(5.0) };
                let mut trace = vec![0.0];
                train_observed(&ds, &cfg, |f| trace.push(f)).unwrap();
                assert!(trace.len() > 2);
                for w in trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let ds = xor();
        let cfg = TrainConfig::default().with_kernel(KernelSpec::Rbf { gamma: 0.7 }).with_c(3.0);
        let (model, _) = train(&ds, &cfg).unwrap();
        let json = model.to_json(None);
        let (back, scaling) = SvmModel::from_json(&json).unwrap();
        assert!(scaling.is_none());
        assert_eq!(back, model);
        for s in ds.samples() {
            assert_eq!(back.decision(&s.features).to_bits(), model.decision(&s.features).to_bits());
        }
        assert!(SvmModel::from_json("{").is_err());
        assert!(SvmModel::from_json(&json.replace("cloudsvm-model", "other")).is_err());
    }
}
