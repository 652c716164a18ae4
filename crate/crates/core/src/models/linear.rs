//! Multinomial logistic regression. Layout: `W` (K x D, row-major) then `b` (K).

use rand::seq::SliceRandom;

use super::{l1_thresholds, log_prior, soft_threshold, softmax_in_place, Matrix, ModelError, TrainConfig};
use crate::rng;

pub fn n_params(d: usize, k: usize) -> usize {
    k * d + k
}

pub fn forward(params: &[f64], x: &[f64], k: usize) -> Vec<f64> {
    let d = x.len();
    let (w, b) = params.split_at(k * d);
    let mut z: Vec<f64> = (0..k).map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).collect();
    softmax_in_place(&mut z);
    z
}

/// Mean cross-entropy over `rows` of `x` and its gradient.
pub fn loss_and_grad_rows(params: &[f64], x: &Matrix, labels: &[usize], k: usize, rows: &[usize]) -> (f64, Vec<f64>) {
    let d = x.cols;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for &r in rows {
        let xr = x.row(r);
        let p = forward(params, xr, k);
        loss -= p[labels[r]].max(1e-300).ln();
        for c in 0..k {
            let e = p[c] - f64::from(u8::from(c == labels[r]));
            let g = &mut grad[c * d..(c + 1) * d];
            for (gj, v) in g.iter_mut().zip(xr) {
                *gj += e * v;
            }
            grad[k * d + c] += e;
        }
    }
    let n = rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

pub fn loss_and_grad(params: &[f64], x: &Matrix, labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let rows: Vec<usize> = (0..x.rows).collect();
    loss_and_grad_rows(params, x, labels, k, &rows)
}

/// Proximal gradient descent on standardised inputs.
pub(crate) fn fit(x: &Matrix, labels: &[usize], k: usize, config: &TrainConfig, lr: f64) -> Result<Vec<f64>, ModelError> {
    let d = x.cols;
    let mut params = vec![0.0; n_params(d, k)];
    params[k * d..].copy_from_slice(&log_prior(labels, k));
    let lambda = l1_thresholds(labels, k, config.l1_z);
    let batch = config.batch_for(x.rows);
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mut stream = rng::stream(rng::derive_named(config.seed, "linear"));
    for epoch in 0..config.epochs {
        if batch < x.rows {
            order.shuffle(&mut stream);
        }
        for chunk in order.chunks(batch) {
            let (loss, grad) = loss_and_grad_rows(&params, x, labels, k, chunk);
            if !loss.is_finite() {
                return Err(ModelError::Diverged(epoch));
            }
            for c in 0..k {
                for j in 0..d {
                    let i = c * d + j;
                    params[i] = soft_threshold(params[i] - lr * grad[i], lr * lambda[c]);
                }
                params[k * d + c] -= lr * grad[k * d + c];
            }
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::Diverged(config.epochs));
    }
    Ok(params)
}
