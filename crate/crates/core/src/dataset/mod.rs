//! Labeled sparse samples and the operations that ingest, split and scale them.

mod io;
mod scale;
mod split;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    decode_samples, encode_samples, format_sample_line, parse_csv, parse_csv_records,
    parse_libsvm, parse_libsvm_records, records_to_dataset, serialize_libsvm, CsvOptions,
    LabelMapping, RawRecord,
};
pub use scale::{scale_features, ScalingMode, ScalingParams};
pub use split::{kfold_split, partition, Fold, Partition, PartitionStrategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {row} column {column}: {message}")]
    Cell {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: label {value} is not +1/-1")]
    Label { line: usize, value: String },
    #[error("invalid feature vector: {0}")]
    Features(String),
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot split: {0}")]
    Split(String),
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// `+1.0` or `-1.0`.
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => f.write_str("+1"),
            Label::Negative => f.write_str("-1"),
        }
    }
}

/// Sparse feature vector with 1-based, strictly increasing indices and
/// finite values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Builds a vector from `(index, value)` pairs in any order.
    pub fn new(mut entries: Vec<(u32, f64)>) -> Result<Self, DatasetError> {
        entries.sort_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DatasetError::Features(format!(
                    "duplicate feature index {}",
                    w[0].0
                )));
            }
        }
        for &(i, v) in &entries {
            if i == 0 {
                return Err(DatasetError::Features("feature index 0".into()));
            }
            if !v.is_finite() {
                return Err(DatasetError::Features(format!(
                    "non-finite value at index {i}"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Dense slice where position `k` holds feature `k + 1`. Zeros are dropped.
    pub fn from_dense(values: &[f64]) -> Result<Self, DatasetError> {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, &v)| (k as u32 + 1, v))
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn max_index(&self) -> u32 {
        self.entries.last().map_or(0, |&(i, _)| i)
    }

    /// Inner product, accumulated in ascending index order.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut p, mut q) = (0, 0);
        let mut sum = 0.0;
        while p < a.len() && q < b.len() {
            match a[p].0.cmp(&b[q].0) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[p].1 * b[q].1;
                    p += 1;
                    q += 1;
                }
            }
        }
        sum
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().fold(0.0, |s, &(_, v)| s + v * v)
    }

    /// Writes the values into `out`, where `out[k]` is feature `k + 1`.
    /// Indices beyond `out.len()` are ignored.
    pub fn scatter_into(&self, out: &mut [f64]) {
        for &(i, v) in &self.entries {
            if let Some(slot) = out.get_mut(i as usize - 1) {
                *slot = v;
            }
        }
    }

    /// Key used for exact content comparison (bit patterns of values).
    pub(crate) fn content_key(&self) -> Vec<(u32, u64)> {
        self.entries.iter().map(|&(i, v)| (i, v.to_bits())).collect()
    }
}

/// One labeled point. `id` is assigned at ingestion and never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: SparseVector,
    pub label: Label,
}

impl Sample {
    pub fn new(id: u64, features: SparseVector, label: Label) -> Self {
        Self {
            id,
            features,
            label,
        }
    }

    /// Same label and bit-identical features; ids are not compared.
    pub fn same_content(&self, other: &Sample) -> bool {
        self.label == other.label && self.features.content_key() == other.features.content_key()
    }
}

/// Ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    /// `dim` becomes the largest feature index present (at least 1 for a
    /// non-empty dataset).
    pub fn new(samples: Vec<Sample>) -> Result<Self, DatasetError> {
        Self::with_dim(samples, 0)
    }

    /// Like [`Dataset::new`] but never reports a dimension below `min_dim`.
    pub fn with_dim(samples: Vec<Sample>, min_dim: usize) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id) {
                return Err(DatasetError::DuplicateId(s.id));
            }
        }
        let observed = samples
            .iter()
            .map(|s| s.features.max_index() as usize)
            .max()
            .unwrap_or(0);
        let mut dim = observed.max(min_dim);
        if dim == 0 && !samples.is_empty() {
            dim = 1;
        }
        Ok(Self { samples, dim })
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<Sample>, dim: usize) -> Self {
        Self { samples, dim }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.samples.iter().map(|s| s.id)
    }

    /// `(negative, positive)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self
            .samples
            .iter()
            .filter(|s| s.label == Label::Positive)
            .count();
        (self.samples.len() - pos, pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }

    /// New dataset holding the samples at `positions`, keeping this dataset's
    /// dimension.
    pub fn select(&self, positions: &[usize]) -> Dataset {
        let samples = positions.iter().map(|&p| self.samples[p].clone()).collect();
        Dataset::from_parts_unchecked(samples, self.dim)
    }
}
