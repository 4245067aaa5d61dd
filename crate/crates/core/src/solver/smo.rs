//! Two-variable SMO iterations for
//!
//! ```text
//! min F(a) = 1/2 a'Qa - 1'a   s.t.  0 <= a_i <= C,  y'a = 0
//! ```
//!
//! The gradient `G = Qa - 1` is maintained incrementally. Working pairs are
//! the maximal violating pair `(argmax_{I_up} -y_t G_t, argmin_{I_low} -y_t G_t)`
//! with ties going to the lowest index.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::kernel::{QMatrix, QRows};

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingSetSelection {
    /// First-order maximal violating pair.
    #[default]
    MaximalViolatingPair,
    /// Same first index; the second maximises the guaranteed objective
    /// decrease using curvature information.
    SecondOrder,
}

/// Anything that can hand out rows of `Q`.
pub trait QSource {
    fn len(&self) -> usize;
    fn diag(&self, i: usize) -> f64;
    fn row(&self, i: usize) -> Arc<[f64]>;
}

impl QSource for QRows {
    fn len(&self) -> usize {
        QRows::len(self)
    }
    fn diag(&self, i: usize) -> f64 {
        QRows::diag(self, i)
    }
    fn row(&self, i: usize) -> Arc<[f64]> {
        QRows::row(self, i)
    }
}

impl QSource for QMatrix {
    fn len(&self) -> usize {
        self.dim()
    }
    fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }
    fn row(&self, i: usize) -> Arc<[f64]> {
        QMatrix::row(self, i).into()
    }
}

#[inline]
fn in_up(y: f64, a: f64, c: f64) -> bool {
    if y > 0.0 {
        a < c
    } else {
        a > 0.0
    }
}

#[inline]
fn in_low(y: f64, a: f64, c: f64) -> bool {
    if y > 0.0 {
        a > 0.0
    } else {
        a < c
    }
}

/// `(m, i, M, j)`: the largest `-y_t G_t` over `I_up` and the smallest over
/// `I_low`, with their first indices. Empty sets give `-inf`/`+inf`.
fn extremes(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> (f64, Option<usize>, f64, Option<usize>) {
    let mut m = f64::NEG_INFINITY;
    let mut big_m = f64::INFINITY;
    let (mut i, mut j) = (None, None);
    for t in 0..alpha.len() {
        let v = -y[t] * grad[t];
        if in_up(y[t], alpha[t], c) && v > m {
            m = v;
            i = Some(t);
        }
        if in_low(y[t], alpha[t], c) && v < big_m {
            big_m = v;
            j = Some(t);
        }
    }
    (m, i, big_m, j)
}

/// Largest KKT violation `max_{I_up}(-y G) - min_{I_low}(-y G)`, floored at 0.
/// Zero exactly at a KKT point of the dual.
pub fn kkt_gap(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (m, _, big_m, _) = extremes(alpha, grad, y, c);
    if m.is_finite() && big_m.is_finite() {
        (m - big_m).max(0.0)
    } else {
        0.0
    }
}

pub(crate) struct Smo<'q, Q: QSource> {
    q: &'q Q,
    y: Vec<f64>,
    c: f64,
    pub(crate) alpha: Vec<f64>,
    pub(crate) grad: Vec<f64>,
    selection: WorkingSetSelection,
}

impl<'q, Q: QSource> Smo<'q, Q> {
    pub(crate) fn new(q: &'q Q, y: Vec<f64>, c: f64, selection: WorkingSetSelection) -> Self {
        let n = y.len();
        debug_assert_eq!(n, q.len());
        Self {
            q,
            y,
            c,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
            selection,
        }
    }

    pub(crate) fn gap(&self) -> f64 {
        kkt_gap(&self.alpha, &self.grad, &self.y, self.c)
    }

    /// `F(a) = 1/2 sum a_i (G_i - 1)`.
    pub(crate) fn objective(&self) -> f64 {
        0.5 * self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>()
    }

    /// Working pair and current gap, or `None` once the gap is within `tol`.
    pub(crate) fn select(&self, tol: f64) -> Option<(usize, usize, f64)> {
        let (m, i, big_m, j) = extremes(&self.alpha, &self.grad, &self.y, self.c);
        let (i, j) = (i?, j?);
        let gap = m - big_m;
        if gap <= tol {
            return None;
        }
        match self.selection {
            WorkingSetSelection::MaximalViolatingPair => Some((i, j, gap)),
            WorkingSetSelection::SecondOrder => {
                let qi = self.q.row(i);
                let qd_i = self.q.diag(i);
                let mut best = f64::INFINITY;
                let mut pick = j;
                for t in 0..self.alpha.len() {
                    if !in_low(self.y[t], self.alpha[t], self.c) {
                        continue;
                    }
                    let b = m + self.y[t] * self.grad[t];
                    if b > 0.0 {
                        let mut a = qd_i + self.q.diag(t) - 2.0 * self.y[i] * self.y[t] * qi[t];
                        if a <= 0.0 {
                            a = TAU;
                        }
                        let score = -(b * b) / a;
                        if score < best {
                            best = score;
                            pick = t;
                        }
                    }
                }
                Some((i, pick, gap))
            }
        }
    }

    /// Optimises the pair `(i, j)` analytically and updates the gradient.
    pub(crate) fn step(&mut self, i: usize, j: usize) {
        let c = self.c;
        let qi = self.q.row(i);
        let qj = self.q.row(j);
        let (qd_i, qd_j) = (self.q.diag(i), self.q.diag(j));
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let (gi, gj) = (self.grad[i], self.grad[j]);

        if self.y[i] != self.y[j] {
            let mut quad = qd_i + qd_j + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qd_i + qd_j - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        if di != 0.0 || dj != 0.0 {
            for (t, g) in self.grad.iter_mut().enumerate() {
                *g += qi[t] * di + qj[t] * dj;
            }
        }
    }

    /// Offset `b` of `f(x) = sum a_i y_i K(x_i, x) + b`: minus the mean of
    /// `y_i G_i` over free variables, or the midpoint of the feasible interval
    /// when every variable sits at a bound.
    pub(crate) fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum_free = 0.0;
        let mut n_free = 0usize;
        for t in 0..self.alpha.len() {
            let yg = self.y[t] * self.grad[t];
            let a = self.alpha[t];
            if a >= self.c {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if a <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        };
        -rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_q() -> QMatrix {
        // x1 = +1 (y=+1), x2 = -1 (y=-1), linear kernel
        QMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]])
    }

    #[test]
    fn gap_at_zero_counts_every_unmet_margin() {
        let y = [1.0, -1.0, 1.0];
        let gap = kkt_gap(&[0.0; 3], &[-1.0; 3], &y, 1.0);
        assert!(gap >= 1.0);
        assert_eq!(gap, 2.0);
        assert_eq!(kkt_gap(&[], &[], &[], 1.0), 0.0);
    }

    #[test]
    fn analytic_pair_in_one_step() {
        let q = pair_q();
        let mut smo = Smo::new(&q, vec![1.0, -1.0], 10.0, WorkingSetSelection::MaximalViolatingPair);
        let (i, j, _) = smo.select(1e-3).unwrap();
        assert_eq!((i, j), (0, 1));
        smo.step(i, j);
        assert_eq!(smo.alpha, [0.5, 0.5]);
        assert!(smo.gap() <= 1e-9);
        assert!(smo.select(1e-3).is_none());
        assert_eq!(smo.objective(), -0.5);
        assert_eq!(smo.bias(), 0.0);
    }

    #[test]
    fn clipped_at_upper_bound() {
        let q = pair_q();
        let mut smo = Smo::new(&q, vec![1.0, -1.0], 0.2, WorkingSetSelection::MaximalViolatingPair);
        let (i, j, _) = smo.select(1e-3).unwrap();
        smo.step(i, j);
        assert_eq!(smo.alpha, [0.2, 0.2]);
        assert!(smo.select(1e-3).is_none());
    }
}
