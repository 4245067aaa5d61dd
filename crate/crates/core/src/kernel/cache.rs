//! On-demand `Q` rows behind a least-recently-used cache bounded in bytes.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{KernelError, KernelSpec};
use crate::dataset::{Label, Sample, SparseVector};

/// Densify when the feature space is this small.
const DENSE_MAX_DIM: usize = 4096;
const DENSE_MAX_CELLS: usize = 1 << 26;

enum Vectors {
    Dense { dim: usize, values: Vec<f64> },
    Sparse(Vec<SparseVector>),
}

impl Vectors {
    #[inline]
    fn dot(&self, i: usize, j: usize) -> f64 {
        match self {
            Vectors::Dense { dim, values } => {
                let a = &values[i * dim..(i + 1) * dim];
                let b = &values[j * dim..(j + 1) * dim];
                let mut sum = 0.0;
                for k in 0..*dim {
                    sum += a[k] * b[k];
                }
                sum
            }
            Vectors::Sparse(v) => v[i].dot(&v[j]),
        }
    }
}

#[derive(Default)]
struct Lru {
    slots: Vec<Option<(Arc<[f64]>, u64)>>,
    order: BTreeMap<u64, usize>,
    clock: u64,
    hits: u64,
    misses: u64,
}

impl Lru {
    fn touch(&mut self, i: usize) -> Option<Arc<[f64]>> {
        let clock = self.clock + 1;
        let (row, stamp) = self.slots[i].as_mut()?;
        self.order.remove(stamp);
        *stamp = clock;
        self.order.insert(clock, i);
        self.clock = clock;
        Some(row.clone())
    }

    fn insert(&mut self, i: usize, row: Arc<[f64]>, capacity: usize) {
        while self.order.len() >= capacity {
            let Some((_, victim)) = self.order.pop_first() else {
                break;
            };
            self.slots[victim] = None;
        }
        self.clock += 1;
        self.order.insert(self.clock, i);
        self.slots[i] = Some((row, self.clock));
    }
}

/// Row provider for `Q[i][j] = y_i * y_j * K(x_i, x_j)` over a fixed sample
/// list. Rows are identical whether served from cache or recomputed. Safe to
/// share between threads.
pub struct QRows {
    spec: KernelSpec,
    signs: Vec<f64>,
    vectors: Vectors,
    norms: Vec<f64>,
    diag: Vec<f64>,
    capacity: usize,
    cache: Mutex<Lru>,
}

impl QRows {
    pub fn new(
        spec: KernelSpec,
        samples: &[Sample],
        cache_budget: usize,
    ) -> Result<Self, KernelError> {
        spec.validate()?;
        let n = samples.len();
        let row_bytes = n * std::mem::size_of::<f64>();
        if cache_budget < row_bytes {
            return Err(KernelError::CacheBudget {
                budget: cache_budget,
                row_bytes,
            });
        }
        let capacity = if row_bytes == 0 {
            0
        } else {
            (cache_budget / row_bytes).min(n)
        };
        let dim = samples
            .iter()
            .map(|s| s.features.max_index() as usize)
            .max()
            .unwrap_or(0);
        let vectors = if dim <= DENSE_MAX_DIM && n.saturating_mul(dim) <= DENSE_MAX_CELLS {
            let mut values = vec![0.0; n * dim];
            for (k, s) in samples.iter().enumerate() {
                s.features.scatter_into(&mut values[k * dim..(k + 1) * dim]);
            }
            Vectors::Dense { dim, values }
        } else {
            Vectors::Sparse(samples.iter().map(|s| s.features.clone()).collect())
        };
        let norms: Vec<f64> = samples.iter().map(|s| s.features.squared_norm()).collect();
        let diag = (0..n)
            .map(|i| spec.from_products(vectors.dot(i, i), norms[i], norms[i]))
            .collect();
        Ok(Self {
            spec,
            signs: samples
                .iter()
                .map(|s| if s.label == Label::Positive { 1.0 } else { -1.0 })
                .collect(),
            vectors,
            norms,
            diag,
            capacity,
            cache: Mutex::new(Lru {
                slots: vec![None; n],
                ..Lru::default()
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.spec
    }

    /// Rows the cache can hold at once.
    pub fn capacity_rows(&self) -> usize {
        self.capacity
    }

    /// `Q[i][i]`, which equals `K(x_i, x_i)`.
    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// `(hits, misses)` so far.
    pub fn cache_stats(&self) -> (u64, u64) {
        let lru = self.cache.lock().expect("cache lock");
        (lru.hits, lru.misses)
    }

    pub fn row(&self, i: usize) -> Arc<[f64]> {
        {
            let mut lru = self.cache.lock().expect("cache lock");
            if let Some(row) = lru.touch(i) {
                lru.hits += 1;
                return row;
            }
            lru.misses += 1;
        }
        let row: Arc<[f64]> = self.compute_row(i).into();
        let mut lru = self.cache.lock().expect("cache lock");
        if let Some(existing) = lru.touch(i) {
            return existing;
        }
        lru.insert(i, row.clone(), self.capacity);
        row
    }

    /// Row `i` computed from scratch, bypassing the cache.
    pub fn compute_row(&self, i: usize) -> Vec<f64> {
        let yi = self.signs[i];
        (0..self.len())
            .map(|j| {
                let k = self
                    .spec
                    .from_products(self.vectors.dot(i, j), self.norms[i], self.norms[j]);
                yi * self.signs[j] * k
            })
            .collect()
    }
}

/// Builds a [`QRows`] provider for `samples`.
pub fn gram_rows(
    spec: &KernelSpec,
    samples: &[Sample],
    cache_budget: usize,
) -> Result<QRows, KernelError> {
    QRows::new(*spec, samples, cache_budget)
}
