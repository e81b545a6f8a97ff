//! Focal loss over sigmoid outputs and categorical cross-entropy over softmax outputs.

use crate::error::{Error, Result};

pub const PROB_CLIP: f64 = 1e-7;

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

fn check_len(y: &[f64], p: &[f64]) -> Result<()> {
    if y.len() != p.len() {
        return Err(Error::ShapeMismatch { component: "loss labels", expected: p.len(), actual: y.len() });
    }
    Ok(())
}

/// Mean over labels of `-alpha (1 - p_t)^gamma ln(p_t)`, where `p_t` is `p`
/// for set labels and `1 - p` otherwise. `y` holds 0/1 labels.
pub fn focal_loss(y: &[f64], p: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
    check_len(y, p)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pt = clip(if yi > 0.5 { pi } else { 1.0 - pi });
            -alpha * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Gradient of [`focal_loss`] with respect to the pre-sigmoid logits.
pub fn focal_grad(y: &[f64], p: &[f64], alpha: f64, gamma: f64, out: &mut [f64]) {
    let n = y.len() as f64;
    for ((o, &yi), &pi) in out.iter_mut().zip(y).zip(p) {
        let p = clip(pi);
        let g = if yi > 0.5 {
            alpha * gamma * p * (1.0 - p).powf(gamma) * p.ln() - alpha * (1.0 - p).powf(gamma + 1.0)
        } else {
            -alpha * gamma * (1.0 - p) * p.powf(gamma) * (1.0 - p).ln() + alpha * p.powf(gamma + 1.0)
        };
        *o = g / n;
    }
}

/// Mean binary cross-entropy, for comparison with the focal loss.
pub fn bce(y: &[f64], p: &[f64]) -> Result<f64> {
    check_len(y, p)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = y.iter().zip(p).map(|(&yi, &pi)| -(yi * clip(pi).ln() + (1.0 - yi) * (1.0 - clip(pi)).ln())).sum();
    Ok(total / y.len() as f64)
}

pub fn cross_entropy(target: usize, p: &[f64]) -> f64 {
    -clip(p[target]).ln()
}

/// Gradient of [`cross_entropy`] with respect to the pre-softmax logits.
pub fn cross_entropy_grad(target: usize, p: &[f64], out: &mut [f64]) {
    for (i, (o, &pi)) in out.iter_mut().zip(p).enumerate() {
        *o = pi - if i == target { 1.0 } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::sigmoid;

    #[test]
    fn reduces_to_bce() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let p = [0.9, 0.2, 0.3, 0.6];
        assert!((focal_loss(&y, &p, 1.0, 0.0).unwrap() - bce(&y, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_point_value() {
        let l = focal_loss(&[1.0], &[0.9], 0.75, 3.0).unwrap();
        assert!((l - 0.75 * 0.1f64.powi(3) * -(0.9f64.ln())).abs() < 1e-15);
        assert!((l - 7.90e-5).abs() < 1e-7);
    }

    #[test]
    fn monotone_in_pt() {
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let l = focal_loss(&[1.0], &[i as f64 / 100.0], 0.75, 3.0).unwrap();
            assert!(l < last && l >= 0.0);
            last = l;
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(focal_loss(&[1.0], &[0.5, 0.5], 1.0, 0.0).is_err());
    }

    #[test]
    fn grad_matches_finite_difference() {
        let y = [1.0, 0.0, 1.0];
        let z = [0.3, -1.2, 2.0];
        let p: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
        let mut g = [0.0; 3];
        focal_grad(&y, &p, 0.75, 3.0, &mut g);
        let h = 1e-6;
        for i in 0..3 {
            let mut up = z;
            up[i] += h;
            let mut down = z;
            down[i] -= h;
            let f = |zz: [f64; 3]| focal_loss(&y, &zz.map(sigmoid), 0.75, 3.0).unwrap();
            let numeric = (f(up) - f(down)) / (2.0 * h);
            assert!((numeric - g[i]).abs() < 1e-8, "{i}: {numeric} vs {}", g[i]);
        }
    }
}
