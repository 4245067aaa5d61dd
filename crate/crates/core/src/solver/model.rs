use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::dataset::{
    decode_samples, encode_samples, Label, Sample, ScalingParams, SparseVector,
};
use crate::kernel::KernelSpec;

const MODEL_FORMAT: &str = "cloudsvm-model";
const MODEL_VERSION: u32 = 1;

/// A trained binary classifier `f(x) = sum_i c_i K(sv_i, x) + b` with
/// `c_i = alpha_i * y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    support_vectors: Vec<Sample>,
    dual_coefs: Vec<f64>,
    sv_norms: Vec<f64>,
    bias: f64,
    kernel: KernelSpec,
    dim: usize,
    linear_weights: Option<Vec<f64>>,
}

impl SvmModel {
    pub fn new(
        support_vectors: Vec<Sample>,
        dual_coefs: Vec<f64>,
        bias: f64,
        kernel: KernelSpec,
        dim: usize,
    ) -> Result<Self, SolverError> {
        if support_vectors.len() != dual_coefs.len() {
            return Err(SolverError::Config(format!(
                "{} support vectors but {} coefficients",
                support_vectors.len(),
                dual_coefs.len()
            )));
        }
        if !bias.is_finite() || dual_coefs.iter().any(|c| !c.is_finite()) {
            return Err(SolverError::Config("non-finite model parameters".into()));
        }
        kernel.validate()?;
        let dim = support_vectors
            .iter()
            .map(|s| s.features.max_index() as usize)
            .max()
            .unwrap_or(0)
            .max(dim);
        let linear_weights = kernel.is_linear().then(|| {
            let mut w = vec![0.0; dim];
            for (sv, &coef) in support_vectors.iter().zip(&dual_coefs) {
                for (i, v) in sv.features.iter() {
                    w[i as usize - 1] += coef * v;
                }
            }
            w
        });
        let sv_norms = support_vectors
            .iter()
            .map(|s| s.features.squared_norm())
            .collect();
        Ok(Self {
            support_vectors,
            dual_coefs,
            sv_norms,
            bias,
            kernel,
            dim,
            linear_weights,
        })
    }

    pub fn support_vectors(&self) -> &[Sample] {
        &self.support_vectors
    }

    pub fn dual_coefs(&self) -> &[f64] {
        &self.dual_coefs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn linear_weights(&self) -> Option<&[f64]> {
        self.linear_weights.as_deref()
    }

    /// Kernel expansion `sum_i c_i K(sv_i, x) + b`.
    pub fn decision(&self, x: &SparseVector) -> f64 {
        let norm_x = x.squared_norm();
        let mut sum = 0.0;
        for ((sv, &coef), &norm_sv) in self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .zip(&self.sv_norms)
        {
            let k = self
                .kernel
                .from_products(sv.features.dot(x), norm_sv, norm_x);
            sum += coef * k;
        }
        sum + self.bias
    }

    /// `w'x + b` through the primal weights; linear kernels only.
    pub fn decision_linear(&self, x: &SparseVector) -> Option<f64> {
        let w = self.linear_weights.as_ref()?;
        let mut sum = 0.0;
        for (i, v) in x.iter() {
            if let Some(wi) = w.get(i as usize - 1) {
                sum += wi * v;
            }
        }
        Some(sum + self.bias)
    }

    /// Fastest available route to the decision value.
    pub fn evaluate(&self, x: &SparseVector) -> f64 {
        self.decision_linear(x).unwrap_or_else(|| self.decision(x))
    }

    /// Sign of the decision value; exactly 0 counts as `+1`.
    pub fn predict(&self, x: &SparseVector) -> Label {
        Label::from_sign(self.decision(x) >= 0.0)
    }

    pub fn to_json(&self, scaling: Option<&ScalingParams>) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kernel: self.kernel,
            bias: self.bias,
            dim: self.dim,
            support_vectors: encode_samples(&self.support_vectors)
                .lines()
                .map(str::to_owned)
                .collect(),
            dual_coefs: self.dual_coefs.clone(),
            scaling: scaling.cloned(),
        };
        serde_json::to_string_pretty(&file).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<ScalingParams>), SolverError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| SolverError::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(SolverError::Model(format!("unexpected format `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(SolverError::Model(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let svs = decode_samples(&file.support_vectors.join("\n"))
            .map_err(|e| SolverError::Model(e.to_string()))?;
        let model = SvmModel::new(svs, file.dual_coefs, file.bias, file.kernel, file.dim)?;
        Ok((model, file.scaling))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    kernel: KernelSpec,
    bias: f64,
    dim: usize,
    support_vectors: Vec<String>,
    dual_coefs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scaling: Option<ScalingParams>,
}
