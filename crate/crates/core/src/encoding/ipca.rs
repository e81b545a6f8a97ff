//! Incremental PCA (Ross et al. style update, as in scikit-learn's
//! `IncrementalPCA.partial_fit`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcaState {
    pub n_components: usize,
    pub input_dim: usize,
    /// `n_components x input_dim`, unit-norm orthogonal rows.
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub mean: Vec<f64>,
    pub samples_seen: u64,
}

impl IpcaState {
    pub fn new(n_components: usize, input_dim: usize) -> Self {
        assert!(n_components >= 1 && n_components <= input_dim, "need 1 <= n_components <= input_dim");
        Self {
            n_components,
            input_dim,
            components: Vec::new(),
            singular_values: Vec::new(),
            mean: vec![0.0; input_dim],
            samples_seen: 0,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.samples_seen > 0
    }

    /// Folds a batch of rows into the decomposition.
    pub fn partial_fit(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        for row in batch {
            if row.len() != self.input_dim {
                return Err(Error::ShapeMismatch {
                    component: "ipca batch",
                    expected: self.input_dim,
                    actual: row.len(),
                });
            }
        }
        if !self.is_fitted() && batch.len() < self.n_components {
            return Err(Error::InsufficientRankSeed { rows: batch.len(), needed: self.n_components });
        }
        let d = self.input_dim;
        let nb = batch.len();
        let x = DMatrix::from_fn(nb, d, |r, c| batch[r][c]);
        let batch_mean = DVector::from_fn(d, |c, _| x.column(c).mean());
        let n_seen = self.samples_seen as f64;
        let n_total = n_seen + nb as f64;
        let old_mean = DVector::from_vec(self.mean.clone());
        let new_mean = (&old_mean * n_seen + &batch_mean * nb as f64) / n_total;

        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= batch_mean.transpose();
        }

        let stacked = if self.is_fitted() {
            let k = self.components.len();
            let mut m = DMatrix::zeros(k + nb + 1, d);
            for i in 0..k {
                for c in 0..d {
                    m[(i, c)] = self.singular_values[i] * self.components[i][c];
                }
            }
            m.view_mut((k, 0), (nb, d)).copy_from(&centered);
            let corr = ((n_seen / n_total) * nb as f64).sqrt();
            for c in 0..d {
                m[(k + nb, c)] = corr * (old_mean[c] - batch_mean[c]);
            }
            m
        } else {
            centered
        };

        let svd = stacked.svd(false, true);
        let vt = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]).then(a.cmp(b)));
        let k = self.n_components.min(order.len());
        self.components = order[..k]
            .iter()
            .map(|&i| {
                let mut row: Vec<f64> = vt.row(i).iter().copied().collect();
                // deterministic sign: largest-magnitude entry positive
                let pivot = row.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                if pivot < 0.0 {
                    row.iter_mut().for_each(|v| *v = -*v);
                }
                row
            })
            .collect();
        self.singular_values = order[..k].iter().map(|&i| svd.singular_values[i]).collect();
        self.mean = new_mean.iter().copied().collect();
        self.samples_seen += nb as u64;
        Ok(())
    }

    /// Projects a row onto the components.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.iter().zip(row).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum()).collect()
    }

    /// Largest deviation of `C C^T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.components.iter().enumerate() {
            for (j, b) in self.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Mean absolute cosine between corresponding components of two states.
pub fn pc_cosine_drift(before: &IpcaState, after: &IpcaState) -> Result<f64> {
    if before.input_dim != after.input_dim {
        return Err(Error::ShapeMismatch {
            component: "ipca input_dim",
            expected: before.input_dim,
            actual: after.input_dim,
        });
    }
    if before.components.len() != after.components.len() {
        return Err(Error::ShapeMismatch {
            component: "ipca components",
            expected: before.components.len(),
            actual: after.components.len(),
        });
    }
    if before.components.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = before
        .components
        .iter()
        .zip(&after.components)
        .map(|(a, b)| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (dot / (na * nb)).abs()
            }
        })
        .sum();
    Ok((total / before.components.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scales: &[f64]) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|c| rng.random_range(-1.0..1.0) * scales[c % scales.len()]).collect()).collect()
    }

    #[test]
    fn orthonormal_after_each_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = IpcaState::new(3, 6);
        for _ in 0..5 {
            st.partial_fit(&random_rows(&mut rng, 20, 6, &[5.0, 3.0, 1.0, 0.5])).unwrap();
            assert!(st.orthonormality_error() < 1e-6);
        }
        assert_eq!(st.samples_seen, 100);
    }

    #[test]
    fn mean_tracks_weighted_average() {
        let batch: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let mut st = IpcaState::new(1, 2);
        st.partial_fit(&[vec![10.0, 10.0], vec![12.0, 10.0]]).unwrap();
        let before = st.mean.clone();
        st.partial_fit(&batch).unwrap();
        // (2 * [11, 10] + 3 * [3, 2]) / 5
        assert!((st.mean[0] - 6.2).abs() < 1e-12);
        assert!((st.mean[1] - 5.2).abs() < 1e-12);
        let first = st.mean.clone();
        st.partial_fit(&batch).unwrap();
        // moves further toward the batch mean [3, 2]
        assert!(st.mean[0] < first[0] && first[0] < before[0]);
        assert!((st.mean[0] - (2.0 * 11.0 + 6.0 * 3.0) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_data() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 - 25.0, 0.0, 0.0]).collect();
        let mut st = IpcaState::new(1, 3);
        st.partial_fit(&rows[..25]).unwrap();
        st.partial_fit(&rows[25..]).unwrap();
        let c = &st.components[0];
        assert!((c[0].abs() - 1.0).abs() < 1e-3, "{c:?}");
    }

    #[test]
    fn insufficient_rank_seed() {
        let mut st = IpcaState::new(4, 6);
        let err = st.partial_fit(&[vec![0.0; 6], vec![1.0; 6]]);
        assert!(matches!(err, Err(Error::InsufficientRankSeed { rows: 2, needed: 4 })));
    }

    #[test]
    fn drift_identity_and_orthogonal() {
        let mut a = IpcaState::new(1, 2);
        a.components = vec![vec![1.0, 0.0]];
        assert_eq!(pc_cosine_drift(&a, &a).unwrap(), 1.0);
        let mut b = a.clone();
        b.components = vec![vec![0.0, 1.0]];
        assert_eq!(pc_cosine_drift(&a, &b).unwrap(), 0.0);
        let c = IpcaState::new(1, 3);
        assert!(pc_cosine_drift(&a, &c).is_err());
    }

    #[test]
    fn small_batch_barely_moves_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = IpcaState::new(3, 8);
        let scales = [8.0, 4.0, 2.0, 0.5, 0.25, 0.1, 0.1, 0.1];
        st.partial_fit(&random_rows(&mut rng, 10_000, 8, &scales)).unwrap();
        let before = st.clone();
        st.partial_fit(&random_rows(&mut rng, 10, 8, &[1.0])).unwrap();
        let sim = pc_cosine_drift(&before, &st).unwrap();
        assert!(sim > 0.8, "{sim}");
    }
}
