//! Per-dimension standardization for real-valued observation data.

use ndarray::{Array1, Array2, ArrayView2};

use crate::dims::ObsKind;
use crate::error::{Error, Result};

use super::SequenceDataset;

/// Per-dimension mean and standard deviation of a training split.
/// Dimensions with zero variance are flagged and passed through with
/// scale 1 so the transform stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub passthrough: Vec<bool>,
}

impl NormStats {
    /// Two-pass statistics over every frame of every sequence.
    pub fn fit(dataset: &SequenceDataset) -> Result<Self> {
        if dataset.obs != ObsKind::Real {
            return Err(Error::config(format!(
                "normalization applies to real observations, not {}",
                dataset.obs
            )));
        }
        let m = dataset
            .visible_dim()
            .ok_or_else(|| Error::config("cannot fit normalization on an empty dataset"))?;
        let total = dataset.total_frames() as f64;
        let mut mean = Array1::zeros(m);
        for r in &dataset.records {
            for row in r.v.rows() {
                mean += &row;
            }
        }
        mean /= total;
        let mut var = Array1::zeros(m);
        for r in &dataset.records {
            for row in r.v.rows() {
                let d = &row - &mean;
                var += &(&d * &d);
            }
        }
        var /= total;
        let mut std = var.mapv(f64::sqrt);
        let mut passthrough = vec![false; m];
        for i in 0..m {
            if std[i] == 0.0 {
                std[i] = 1.0;
                passthrough[i] = true;
            }
        }
        Ok(NormStats { mean, std, passthrough })
    }

    pub fn apply(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = v.to_owned();
        for mut row in out.rows_mut() {
            row -= &self.mean;
            row /= &self.std;
        }
        out
    }

    pub fn invert(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = v.to_owned();
        for mut row in out.rows_mut() {
            row *= &self.std;
            row += &self.mean;
        }
        out
    }
}

/// Standardize every sequence with statistics fitted on the dataset
/// itself (callers pass the training split).
pub fn normalize(dataset: &SequenceDataset) -> Result<(SequenceDataset, NormStats)> {
    let stats = NormStats::fit(dataset)?;
    let mut out = dataset.clone();
    for r in &mut out.records {
        r.v = stats.apply(r.v.view());
    }
    Ok((out, stats))
}

/// Inverse of [`normalize`] given the same statistics.
pub fn denormalize(dataset: &SequenceDataset, stats: &NormStats) -> SequenceDataset {
    let mut out = dataset.clone();
    for r in &mut out.records {
        r.v = stats.invert(r.v.view());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SequenceRecord;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(vs: Vec<Array2<f64>>) -> SequenceDataset {
        SequenceDataset {
            obs: ObsKind::Real,
            records: vs
                .into_iter()
                .enumerate()
                .map(|(i, v)| SequenceRecord { id: format!("s{i}"), v, y: None, labels: vec![] })
                .collect(),
        }
    }

    #[test]
    fn normalized_split_has_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((40, 3), |_| 5.0 + 2.0 * rng.random::<f64>()))
            .collect();
        let (norm, _) = normalize(&dataset(vs)).unwrap();
        let m = 3;
        let total: f64 = norm.total_frames() as f64;
        for d in 0..m {
            let mean: f64 =
                norm.records.iter().flat_map(|r| r.v.column(d).to_vec()).sum::<f64>() / total;
            let var: f64 = norm
                .records
                .iter()
                .flat_map(|r| r.v.column(d).to_vec())
                .map(|x| (x - mean).powi(2))
                .sum::<f64>()
                / total;
            assert!(mean.abs() < 1e-10, "dim {d} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-10, "dim {d} std {}", var.sqrt());
        }
    }

    #[test]
    fn round_trip_is_identity_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vs: Vec<Array2<f64>> =
            (0..2).map(|_| Array2::from_shape_fn((25, 4), |_| 10.0 * rng.random::<f64>())).collect();
        let ds = dataset(vs);
        let (norm, stats) = normalize(&ds).unwrap();
        let back = denormalize(&norm, &stats);
        for (a, b) in ds.records.iter().zip(&back.records) {
            for (x, y) in a.v.iter().zip(b.v.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_dimension_is_flagged_and_passed_through() {
        let ds = dataset(vec![array![[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]]]);
        let (norm, stats) = normalize(&ds).unwrap();
        assert_eq!(stats.passthrough, vec![false, true]);
        assert_eq!(stats.std[1], 1.0);
        for t in 0..3 {
            assert_eq!(norm.records[0].v[(t, 1)], 0.0);
        }
    }

    #[test]
    fn non_real_data_is_rejected() {
        let mut ds = dataset(vec![array![[1.0, 0.0]]]);
        ds.obs = ObsKind::Binary;
        assert!(normalize(&ds).is_err());
    }
}
