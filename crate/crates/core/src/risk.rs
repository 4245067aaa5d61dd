//! Hinge loss, empirical risk and accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Label};
use crate::solver::SvmModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// Mean hinge loss.
    pub empirical_risk: f64,
    /// `correct / n`.
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
}

/// `max(0, 1 - y f)`.
pub fn hinge_loss(f: f64, y: Label) -> f64 {
    (1.0 - y.value() * f).max(0.0)
}

pub fn empirical_risk(model: &SvmModel, ds: &Dataset) -> Result<f64, RiskError> {
    evaluate(model, ds).map(|r| r.empirical_risk)
}

pub fn accuracy(model: &SvmModel, ds: &Dataset) -> Result<f64, RiskError> {
    evaluate(model, ds).map(|r| r.accuracy)
}

/// Risk and accuracy in one pass over `ds`.
pub fn evaluate(model: &SvmModel, ds: &Dataset) -> Result<RiskReport, RiskError> {
    report_from_decisions(
        ds.samples()
            .iter()
            .map(|s| (model.evaluate(&s.features), s.label)),
    )
}

/// Builds a report from `(decision, label)` pairs.
pub fn report_from_decisions(
    pairs: impl IntoIterator<Item = (f64, Label)>,
) -> Result<RiskReport, RiskError> {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut n = 0;
    for (f, y) in pairs {
        loss += hinge_loss(f, y);
        if Label::from_sign(f >= 0.0) == y {
            correct += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(RiskError::EmptyDataset);
    }
    Ok(RiskReport {
        empirical_risk: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        correct,
        n,
    })
}
