//! Small dense-math kernels over flat row-major `f64` buffers and the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `out = W x + b` for `W` of shape `rows x cols`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let rows = b.len();
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Backward of [`affine`]: accumulates `dW += dy x^T`, `db += dy` and, when
/// requested, `dx += W^T dy`.
pub fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[r] += g;
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for (d, xi) in drow.iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

/// `affine` for inputs that are mostly zero: only the listed columns are read.
pub fn affine_sparse(w: &[f64], b: &[f64], x: &[f64], nz: &[usize], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate().take(b.len()) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + nz.iter().map(|&j| row[j] * x[j]).sum::<f64>();
    }
}

/// Weight and bias gradients of [`affine_sparse`]; the input gets none.
pub fn affine_backward_sparse(x: &[f64], nz: &[usize], dy: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[r] += g;
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for &j in nz {
            drow[j] += g * x[j];
        }
    }
}

pub fn nonzero(x: &[f64]) -> Vec<usize> {
    x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
}

/// Largest relative gap between an analytic gradient and central differences
/// of `loss` at `params`. Entries where both sides are below `floor` in
/// magnitude are compared against `floor` instead.
pub fn max_relative_error<F>(params: &[f64], analytic: &[f64], h: f64, floor: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = numeric.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max((numeric - analytic[i]).abs() / denom);
    }
    worst
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Glorot-uniform initialization of a `rows x cols` block.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, out: &mut [f64]) {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    for v in out.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-7, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One update. Entries where `mask` is false are left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], mask: Option<&[bool]>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if let Some(m) = mask {
                if !m[i] {
                    continue;
                }
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
