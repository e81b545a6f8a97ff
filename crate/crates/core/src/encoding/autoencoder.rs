//! Per-table block autoencoder: one tanh bottleneck, linear reconstruction, MSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, glorot, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub enc_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { enc_dim: 16, epochs: 30, lr: 1e-3, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub input_dim: usize,
    pub enc_dim: usize,
    params: Vec<f64>,
}

struct Offsets {
    w_enc: std::ops::Range<usize>,
    b_enc: std::ops::Range<usize>,
    w_dec: std::ops::Range<usize>,
    b_dec: std::ops::Range<usize>,
}

impl Autoencoder {
    fn offsets(input_dim: usize, enc_dim: usize) -> Offsets {
        let a = enc_dim * input_dim;
        let b = a + enc_dim;
        let c = b + input_dim * enc_dim;
        let d = c + input_dim;
        Offsets { w_enc: 0..a, b_enc: a..b, w_dec: b..c, b_dec: c..d }
    }

    pub fn new(input_dim: usize, enc_dim: usize, seed: u64) -> Self {
        let o = Self::offsets(input_dim, enc_dim);
        let mut params = vec![0.0; o.b_dec.end];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        glorot(&mut rng, enc_dim, input_dim, &mut params[o.w_enc.clone()]);
        glorot(&mut rng, input_dim, enc_dim, &mut params[o.w_dec.clone()]);
        Self { input_dim, enc_dim, params }
    }

    /// Hidden code of one preprocessed block.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let o = Self::offsets(self.input_dim, self.enc_dim);
        let mut h = vec![0.0; self.enc_dim];
        affine(&self.params[o.w_enc], &self.params[o.b_enc], x, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        h
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let o = Self::offsets(self.input_dim, self.enc_dim);
        let h = self.encode(x);
        let mut y = vec![0.0; self.input_dim];
        affine(&self.params[o.w_dec], &self.params[o.b_dec], &h, &mut y);
        y
    }

    /// Mean squared reconstruction error over all entries.
    pub fn loss(&self, data: &[Vec<f64>]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let total: f64 =
            data.iter().map(|x| self.reconstruct(x).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum();
        total / (data.len() * self.input_dim) as f64
    }

    fn accumulate_grad(&self, x: &[f64], grad: &mut [f64]) {
        let o = Self::offsets(self.input_dim, self.enc_dim);
        let h = self.encode(x);
        let mut y = vec![0.0; self.input_dim];
        affine(&self.params[o.w_dec.clone()], &self.params[o.b_dec.clone()], &h, &mut y);
        let scale = 2.0 / self.input_dim as f64;
        let dy: Vec<f64> = y.iter().zip(x).map(|(a, b)| scale * (a - b)).collect();
        let mut dh = vec![0.0; self.enc_dim];
        {
            let (head, tail) = grad.split_at_mut(o.w_dec.start);
            let (dw_dec, db_dec) = tail.split_at_mut(o.w_dec.len());
            affine_backward(&self.params[o.w_dec.clone()], &h, &dy, dw_dec, db_dec, Some(&mut dh));
            let dz: Vec<f64> = dh.iter().zip(&h).map(|(g, hv)| g * (1.0 - hv * hv)).collect();
            let (dw_enc, db_enc) = head.split_at_mut(o.w_enc.len());
            affine_backward(&self.params[o.w_enc.clone()], x, &dz, dw_enc, db_enc, None);
        }
    }

    /// Mini-batch Adam on `data`. Returns the loss before training followed by
    /// the loss after each epoch.
    pub fn fit(&mut self, data: &[Vec<f64>], cfg: &AutoencoderConfig) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if let Some(bad) = data.iter().find(|r| r.len() != self.input_dim) {
            return Err(Error::ShapeMismatch {
                component: "autoencoder input",
                expected: self.input_dim,
                actual: bad.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6165);
        let mut opt = Adam::new(cfg.lr, self.params.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = vec![self.loss(data)];
        let bs = cfg.batch_size.max(1);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                let mut grad = vec![0.0; self.params.len()];
                for &i in chunk {
                    self.accumulate_grad(&data[i], &mut grad);
                }
                grad.iter_mut().for_each(|g| *g /= chunk.len() as f64);
                opt.step(&mut self.params, &grad, None);
            }
            let l = self.loss(data);
            if !l.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            history.push(l);
        }
        Ok(history)
    }
}

/// Builds and trains an autoencoder for one table's preprocessed blocks.
pub fn train_autoencoder(blocks: &[Vec<f64>], cfg: &AutoencoderConfig) -> Result<(Autoencoder, Vec<f64>)> {
    let first = blocks.first().ok_or(Error::EmptyTrainingSet)?;
    let mut ae = Autoencoder::new(first.len(), cfg.enc_dim, cfg.seed);
    let history = ae.fit(blocks, cfg)?;
    Ok((ae, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic_blocks(n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                (0..d).map(|j| if j % 2 == 0 { a * 0.8 } else { (a + b) * 0.4 }).collect()
            })
            .collect()
    }

    #[test]
    fn loss_decreases() {
        let data = synthetic_blocks(200, 12);
        let cfg = AutoencoderConfig { enc_dim: 4, epochs: 50, ..Default::default() };
        let (ae, hist) = train_autoencoder(&data, &cfg).unwrap();
        assert_eq!(hist.len(), 51);
        assert!(hist[50] < hist[0], "{} !< {}", hist[50], hist[0]);
        for x in &data {
            assert_eq!(ae.encode(x).len(), 4);
        }
        assert_eq!(ae.encode(&data[0]), ae.encode(&data[0]));
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(train_autoencoder(&[], &AutoencoderConfig::default()), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = synthetic_blocks(3, 5);
        let ae = Autoencoder::new(5, 3, 11);
        let mut grad = vec![0.0; ae.params.len()];
        for x in &data {
            ae.accumulate_grad(x, &mut grad);
        }
        let h = 1e-5;
        #[allow(clippy::needless_range_loop)]
        for i in 0..ae.params.len() {
            let mut p = ae.clone();
            p.params[i] += h;
            let up = p.loss(&data);
            p.params[i] -= 2.0 * h;
            let down = p.loss(&data);
            // loss() averages over rows; accumulate_grad sums rows
            let numeric = (up - down) / (2.0 * h) * data.len() as f64;
            assert!((numeric - grad[i]).abs() < 1e-6 * (1.0 + numeric.abs()), "param {i}: {numeric} vs {}", grad[i]);
        }
    }
}
