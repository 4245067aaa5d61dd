use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Each feature's observed `[min, max]` onto `[-1, 1]`.
    #[default]
    Minmax,
    None,
}

/// Per-feature ranges fitted on one dataset and reapplicable to others.
/// `ranges[k]` belongs to feature `k + 1`; absent features count as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mode: ScalingMode,
    pub ranges: Vec<(f64, f64)>,
}

impl ScalingParams {
    pub fn identity() -> Self {
        Self {
            mode: ScalingMode::None,
            ranges: Vec::new(),
        }
    }

    pub fn fit(ds: &Dataset, mode: ScalingMode) -> Self {
        if mode == ScalingMode::None || ds.is_empty() {
            return Self {
                mode,
                ranges: Vec::new(),
            };
        }
        let dim = ds.dim();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
        let mut present = vec![0usize; dim];
        for s in ds.samples() {
            for (i, v) in s.features.iter() {
                let r = &mut ranges[i as usize - 1];
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
                present[i as usize - 1] += 1;
            }
        }
        for (r, &count) in ranges.iter_mut().zip(&present) {
            if count < ds.len() {
                // implicit zeros
                r.0 = r.0.min(0.0);
                r.1 = r.1.max(0.0);
            }
        }
        Self { mode, ranges }
    }

    pub fn scale_value(&self, index: u32, v: f64) -> f64 {
        match self.ranges.get(index as usize - 1) {
            Some(&(lo, hi)) if hi > lo => -1.0 + 2.0 * (v - lo) / (hi - lo),
            Some(_) => 0.0,
            None => v,
        }
    }

    pub fn unscale_value(&self, index: u32, y: f64) -> f64 {
        match self.ranges.get(index as usize - 1) {
            Some(&(lo, hi)) if hi > lo => lo + (y + 1.0) * (hi - lo) / 2.0,
            Some(&(lo, _)) => lo,
            None => y,
        }
    }

    pub fn apply_features(&self, x: &SparseVector) -> SparseVector {
        self.map_features(x, |i, v| self.scale_value(i, v))
    }

    pub fn invert_features(&self, x: &SparseVector) -> SparseVector {
        self.map_features(x, |i, v| self.unscale_value(i, v))
    }

    fn map_features(&self, x: &SparseVector, f: impl Fn(u32, f64) -> f64) -> SparseVector {
        if self.mode == ScalingMode::None {
            return x.clone();
        }
        let fitted = self.ranges.len();
        let mut dense = vec![0.0; fitted];
        x.scatter_into(&mut dense);
        let mut entries: Vec<(u32, f64)> = dense
            .iter()
            .enumerate()
            .map(|(k, &v)| (k as u32 + 1, f(k as u32 + 1, v)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        entries.extend(x.iter().filter(|&(i, _)| i as usize > fitted));
        SparseVector::new(entries).expect("scaled features stay valid")
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        self.map_dataset(ds, |x| self.apply_features(x))
    }

    pub fn invert(&self, ds: &Dataset) -> Dataset {
        self.map_dataset(ds, |x| self.invert_features(x))
    }

    fn map_dataset(&self, ds: &Dataset, f: impl Fn(&SparseVector) -> SparseVector) -> Dataset {
        let samples = ds
            .samples()
            .iter()
            .map(|s| Sample::new(s.id, f(&s.features), s.label))
            .collect();
        Dataset::from_parts_unchecked(samples, ds.dim())
    }
}

/// Fits scaling on `ds` and returns the scaled copy with its parameters.
pub fn scale_features(ds: &Dataset, mode: ScalingMode) -> (Dataset, ScalingParams) {
    let params = ScalingParams::fit(ds, mode);
    (params.apply(ds), params)
}

#[cfg(test)]
mod tests {
    use super::super::Label;
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Dataset {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                Sample::new(
                    i as u64,
                    SparseVector::from_dense(&[v]).unwrap(),
                    Label::Positive,
                )
            })
            .collect();
        Dataset::with_dim(samples, 1).unwrap()
    }

    fn values(ds: &Dataset) -> Vec<f64> {
        ds.samples().iter().map(|s| s.features.get(1)).collect()
    }

    #[test]
    fn minmax_maps_onto_unit_interval() {
        let (scaled, params) = scale_features(&column(&[0.0, 5.0, 10.0]), ScalingMode::Minmax);
        assert_eq!(values(&scaled), [-1.0, 0.0, 1.0]);
        assert_eq!(params.ranges, [(0.0, 10.0)]);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let (scaled, _) = scale_features(&column(&[3.0, 3.0, 3.0]), ScalingMode::Minmax);
        assert_eq!(values(&scaled), [0.0, 0.0, 0.0]);
        assert!(scaled.samples().iter().all(|s| s.features.is_empty()));
    }

    #[test]
    fn none_is_identity() {
        let ds = column(&[1.0, -4.0]);
        let (scaled, params) = scale_features(&ds, ScalingMode::None);
        assert_eq!(scaled, ds);
        assert!(params.ranges.is_empty());
    }

    #[test]
    fn params_reapply_to_held_out_data() {
        let (_, params) = scale_features(&column(&[2.0, 4.0]), ScalingMode::Minmax);
        let held_out = params.apply(&column(&[3.0, 6.0]));
        assert_eq!(values(&held_out), [0.0, 3.0]);
    }

    proptest! {
        #[test]
        fn scaling_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..15)) {
            let samples = rows.iter().enumerate().map(|(i, r)| {
                Sample::new(i as u64, SparseVector::from_dense(r).unwrap(), Label::Negative)
            }).collect();
            let ds = Dataset::with_dim(samples, 4).unwrap();
            let (scaled, params) = scale_features(&ds, ScalingMode::Minmax);
            let back = params.invert(&scaled);
            for (a, b) in ds.samples().iter().zip(back.samples()) {
                for idx in 1..=4u32 {
                    let (x, y) = (a.features.get(idx), b.features.get(idx));
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", x, y);
                }
            }
        }
    }
}
