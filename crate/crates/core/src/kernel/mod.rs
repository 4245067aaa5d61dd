//! Kernel functions and `Q` matrix access for the dual problem, where
//! `Q[i][j] = y_i * y_j * K(x_i, x_j)`.

mod cache;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{Sample, SparseVector};

pub use cache::{gram_rows, QRows};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel: {0}")]
    Invalid(String),
    #[error("cache budget of {budget} bytes is below one row ({row_bytes} bytes)")]
    CacheBudget { budget: usize, row_bytes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
    Polynomial { gamma: f64, degree: u32, coef0: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Linear
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Rbf { gamma } => {
                Err(KernelError::Invalid(format!("rbf gamma must be > 0, got {gamma}")))
            }
            KernelSpec::Polynomial {
                gamma,
                degree,
                coef0,
            } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    Err(KernelError::Invalid(format!(
                        "polynomial gamma must be > 0, got {gamma}"
                    )))
                } else if degree == 0 {
                    Err(KernelError::Invalid("polynomial degree must be >= 1".into()))
                } else if !coef0.is_finite() {
                    Err(KernelError::Invalid("polynomial coef0 must be finite".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, KernelSpec::Linear)
    }

    /// Same kernel with `gamma` replaced. The linear kernel has no `gamma`
    /// and is returned unchanged.
    pub fn with_gamma(self, gamma: f64) -> Self {
        match self {
            KernelSpec::Linear => KernelSpec::Linear,
            KernelSpec::Rbf { .. } => KernelSpec::Rbf { gamma },
            KernelSpec::Polynomial { degree, coef0, .. } => KernelSpec::Polynomial {
                gamma,
                degree,
                coef0,
            },
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Rbf { gamma } | KernelSpec::Polynomial { gamma, .. } => Some(gamma),
        }
    }

    /// Kernel value given the inner product and both squared norms.
    #[inline]
    pub(crate) fn from_products(&self, dot: f64, norm_x: f64, norm_z: f64) -> f64 {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Rbf { gamma } => {
                let d2 = (norm_x + norm_z - 2.0 * dot).max(0.0);
                (-gamma * d2).exp()
            }
            KernelSpec::Polynomial {
                gamma,
                degree,
                coef0,
            } => (gamma * dot + coef0).powi(degree as i32),
        }
    }
}

/// `K(x, z)`. Symmetric bit for bit in its arguments.
pub fn kernel_value(spec: &KernelSpec, x: &SparseVector, z: &SparseVector) -> f64 {
    match spec {
        KernelSpec::Linear => x.dot(z),
        KernelSpec::Rbf { .. } => {
            spec.from_products(x.dot(z), x.squared_norm(), z.squared_norm())
        }
        KernelSpec::Polynomial { .. } => spec.from_products(x.dot(z), 0.0, 0.0),
    }
}

/// `y_a * y_b * K(x_a, x_b)`.
pub fn q_entry(spec: &KernelSpec, a: &Sample, b: &Sample) -> f64 {
    let k = kernel_value(spec, &a.features, &b.features);
    if a.label == b.label {
        k
    } else {
        -k
    }
}

/// Fully materialised `Q`, row-major. Meant for small problems and checks.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    n: usize,
    data: Vec<f64>,
}

impl QMatrix {
    pub fn from_samples(spec: &KernelSpec, samples: &[Sample]) -> Self {
        let n = samples.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = q_entry(spec, &samples[i], &samples[j]);
            }
        }
        Self { n, data }
    }

    /// Cross block with rows from `rows` and columns from `cols`.
    pub fn cross_block(spec: &KernelSpec, rows: &[Sample], cols: &[Sample]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|a| cols.iter().map(|b| q_entry(spec, a, b)).collect())
            .collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "Q must be square");
        Self {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

// -- text and JSON forms --------------------------------------------------

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Linear => f.write_str("linear"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf:gamma={gamma}"),
            KernelSpec::Polynomial {
                gamma,
                degree,
                coef0,
            } => write!(f, "poly:degree={degree},gamma={gamma},coef0={coef0}"),
        }
    }
}

/// Grammar: `linear`, `rbf:gamma=<v>`, `poly:degree=<d>,gamma=<v>,coef0=<v>`.
/// Polynomial parameters default to degree 3, gamma 1, coef0 0.
impl FromStr for KernelSpec {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = match s.split_once(':') {
            Some((k, p)) => (k.trim(), p.trim()),
            None => (s.trim(), ""),
        };
        let mut gamma = None;
        let mut degree = None;
        let mut coef0 = None;
        for pair in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| KernelError::Invalid(format!("expected key=value, got `{pair}`")))?;
            let bad = || KernelError::Invalid(format!("bad value for {key}: `{value}`"));
            match key.trim() {
                "gamma" => gamma = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
                "degree" => degree = Some(value.trim().parse::<u32>().map_err(|_| bad())?),
                "coef0" => coef0 = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
                other => {
                    return Err(KernelError::Invalid(format!("unknown kernel parameter `{other}`")))
                }
            }
        }
        let spec = match kind {
            "linear" => {
                if degree.is_some() || coef0.is_some() {
                    return Err(KernelError::Invalid(
                        "linear kernel takes no degree/coef0".into(),
                    ));
                }
                if let Some(g) = gamma {
                    log::warn!("gamma={g} has no effect on the linear kernel; ignoring it");
                }
                KernelSpec::Linear
            }
            "rbf" => {
                if degree.is_some() || coef0.is_some() {
                    return Err(KernelError::Invalid("rbf kernel takes only gamma".into()));
                }
                KernelSpec::Rbf {
                    gamma: gamma
                        .ok_or_else(|| KernelError::Invalid("rbf kernel needs gamma".into()))?,
                }
            }
            "poly" | "polynomial" => KernelSpec::Polynomial {
                gamma: gamma.unwrap_or(1.0),
                degree: degree.unwrap_or(3),
                coef0: coef0.unwrap_or(0.0),
            },
            other => return Err(KernelError::Invalid(format!("unknown kernel `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coef0: Option<f64>,
}

impl Serialize for KernelSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match *self {
            KernelSpec::Linear => KernelRepr {
                kind: "linear".into(),
                gamma: None,
                degree: None,
                coef0: None,
            },
            KernelSpec::Rbf { gamma } => KernelRepr {
                kind: "rbf".into(),
                gamma: Some(gamma),
                degree: None,
                coef0: None,
            },
            KernelSpec::Polynomial {
                gamma,
                degree,
                coef0,
            } => KernelRepr {
                kind: "polynomial".into(),
                gamma: Some(gamma),
                degree: Some(degree),
                coef0: Some(coef0),
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = KernelRepr::deserialize(deserializer)?;
        let spec = match r.kind.as_str() {
            "linear" => {
                if let Some(g) = r.gamma {
                    log::warn!("gamma={g} has no effect on the linear kernel; ignoring it");
                }
                KernelSpec::Linear
            }
            "rbf" => KernelSpec::Rbf {
                gamma: r.gamma.ok_or_else(|| D::Error::missing_field("gamma"))?,
            },
            "polynomial" | "poly" => KernelSpec::Polynomial {
                gamma: r.gamma.unwrap_or(1.0),
                degree: r.degree.unwrap_or(3),
                coef0: r.coef0.unwrap_or(0.0),
            },
            other => {
                return Err(D::Error::unknown_variant(
                    other,
                    &["linear", "rbf", "polynomial"],
                ))
            }
        };
        spec.validate().map_err(D::Error::custom)?;
        Ok(spec)
    }
}
