//! # cloudsvm
//!
//! Distributed training of a binary soft-margin SVM by iterative
//! support-vector exchange. The training set is split into `L` partitions;
//! every round each partition is merged with the current global support
//! vector set and trained independently, the resulting support vectors are
//! unioned back into the global set, and a single global hypothesis is fit
//! on that set. Rounds repeat until the empirical hinge risk stops moving or
//! the support-vector set reaches a fixed point.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: samples, LIBSVM/CSV ingestion, partitioning, k-fold splits
//!   and feature scaling.
//! - [`kernel`]: kernel functions and a cached `Q` row provider.
//! - [`solver`]: an SMO solver for the dual QP and the trained [`SvmModel`].
//! - [`risk`]: hinge loss, empirical risk and accuracy.
//! - [`executor`]: a local, deterministic map/shuffle/reduce harness.
//! - [`trainer`]: the support-vector exchange loop built on the executor.
//! - [`experiment`]: cross-validation, grid search and report output.

pub mod dataset;
pub mod executor;
pub mod experiment;
pub mod kernel;
pub mod risk;
pub mod solver;
pub mod trainer;

pub use dataset::{Dataset, Label, Sample, SparseVector};
pub use kernel::KernelSpec;
pub use solver::{SvmModel, TrainConfig};
pub use trainer::{cloud_train, CloudTrainConfig};
