//! Partitioning across nodes and k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Position `p` goes to partition `p mod L`.
    RoundRobin,
    /// Seeded shuffle, then round-robin.
    Shuffled,
    /// Seeded shuffle within each class, then round-robin over the classes
    /// back to back, so every partition gets both classes whenever each class
    /// has at least `L` members.
    #[default]
    Stratified,
}

/// One node's share of the training data. `index` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub index: usize,
    pub data: Dataset,
}

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Dataset,
    pub test: Dataset,
}

/// Sample positions in dealing order for `strategy`.
fn dealing_order(ds: &Dataset, seed: u64, strategy: PartitionStrategy) -> Vec<usize> {
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match strategy {
        PartitionStrategy::RoundRobin => (0..n).collect(),
        PartitionStrategy::Shuffled => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        }
        PartitionStrategy::Stratified => {
            let mut order = Vec::with_capacity(n);
            for class in [Label::Negative, Label::Positive] {
                let mut members: Vec<usize> = (0..n)
                    .filter(|&p| ds.samples()[p].label == class)
                    .collect();
                members.shuffle(&mut rng);
                order.extend(members);
            }
            order
        }
    }
}

/// Splits `ds` into `l` disjoint partitions whose sizes differ by at most one.
pub fn partition(
    ds: &Dataset,
    l: usize,
    seed: u64,
    strategy: PartitionStrategy,
) -> Result<Vec<Partition>, DatasetError> {
    if l == 0 || l > ds.len() {
        return Err(DatasetError::Argument(format!(
            "partition count {l} must be in 1..={}",
            ds.len()
        )));
    }
    let mut buckets = vec![Vec::new(); l];
    for (k, p) in dealing_order(ds, seed, strategy).into_iter().enumerate() {
        buckets[k % l].push(p);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(i, positions)| Partition {
            index: i + 1,
            data: ds.select(&positions),
        })
        .collect())
}

/// `k` train/test folds; every sample is in exactly one test fold. Train and
/// test sets keep the source order. Stratified folds hold each class's count
/// to within one of its fair share.
pub fn kfold_split(
    ds: &Dataset,
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<Vec<Fold>, DatasetError> {
    if k == 0 || k > ds.len() {
        return Err(DatasetError::Argument(format!(
            "fold count {k} must be in 1..={}",
            ds.len()
        )));
    }
    if stratified {
        let (neg, pos) = ds.class_counts();
        if neg < k || pos < k {
            return Err(DatasetError::Split(format!(
                "stratified {k}-fold split needs at least {k} samples per class \
                 (have {neg} negative, {pos} positive)"
            )));
        }
    }
    let strategy = if stratified {
        PartitionStrategy::Stratified
    } else {
        PartitionStrategy::Shuffled
    };
    let mut fold_of = vec![0usize; ds.len()];
    for (j, p) in dealing_order(ds, seed, strategy).into_iter().enumerate() {
        fold_of[p] = j % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&p| fold_of[p] == f);
            Fold {
                train: ds.select(&train),
                test: ds.select(&test),
            }
        })
        .collect())
}
