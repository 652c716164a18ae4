//! ReLU multilayer perceptron with a softmax head, trained with Adam.
//! Layout: per layer `W` (out x in, row-major) then `b` (out).

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{log_prior, softmax_in_place, Matrix, ModelError, TrainConfig};
use crate::rng;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub fn layer_sizes(d: usize, hidden: &[usize], k: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(d);
    s.extend_from_slice(hidden);
    s.push(k);
    s
}

pub fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Activations of every layer; the last entry is the output simplex.
fn activations(params: &[f64], sizes: &[usize], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    let mut off = 0;
    let n_layers = sizes.len() - 1;
    for l in 0..n_layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &params[off..off + fan_out * fan_in];
        let b = &params[off + fan_out * fan_in..off + fan_out * fan_in + fan_out];
        off += fan_out * fan_in + fan_out;
        let prev = &acts[l];
        let mut z: Vec<f64> = (0..fan_out).map(|o| b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(prev).map(|(a, v)| a * v).sum::<f64>()).collect();
        if l + 1 < n_layers {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        } else {
            softmax_in_place(&mut z);
        }
        acts.push(z);
    }
    acts
}

pub fn forward(params: &[f64], sizes: &[usize], x: &[f64]) -> Vec<f64> {
    activations(params, sizes, x).pop().expect("at least one layer")
}

pub fn loss_and_grad_rows(params: &[f64], sizes: &[usize], x: &Matrix, labels: &[usize], rows: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let n_layers = sizes.len() - 1;
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for l in 0..n_layers {
        offsets.push(off);
        off += sizes[l + 1] * sizes[l] + sizes[l + 1];
    }
    for &r in rows {
        let acts = activations(params, sizes, x.row(r));
        let out = &acts[n_layers];
        loss -= out[labels[r]].max(1e-300).ln();
        let mut delta: Vec<f64> = out.iter().enumerate().map(|(c, p)| p - f64::from(u8::from(c == labels[r]))).collect();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let o = offsets[l];
            let prev = &acts[l];
            for j in 0..fan_out {
                let gw = &mut grad[o + j * fan_in..o + (j + 1) * fan_in];
                for (g, a) in gw.iter_mut().zip(prev) {
                    *g += delta[j] * a;
                }
                grad[o + fan_out * fan_in + j] += delta[j];
            }
            if l > 0 {
                let w = &params[o..o + fan_out * fan_in];
                delta = (0..fan_in).map(|i| if prev[i] <= 0.0 { 0.0 } else { (0..fan_out).map(|j| w[j * fan_in + i] * delta[j]).sum() }).collect();
            }
        }
    }
    let n = rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

pub fn loss_and_grad(params: &[f64], sizes: &[usize], x: &Matrix, labels: &[usize]) -> (f64, Vec<f64>) {
    let rows: Vec<usize> = (0..x.rows).collect();
    loss_and_grad_rows(params, sizes, x, labels, &rows)
}

/// He-normal weights, zero hidden biases, log-prior output bias.
pub fn init_params(sizes: &[usize], labels: &[usize], seed: u64) -> Vec<f64> {
    let mut stream = rng::stream(rng::derive_named(seed, "mlp-init"));
    let mut params = Vec::with_capacity(n_params(sizes));
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let he = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("positive sd");
        params.extend((0..fan_in * fan_out).map(|_| he.sample(&mut stream)));
        if l + 2 == sizes.len() {
            params.extend(log_prior(labels, fan_out));
        } else {
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
    }
    params
}

pub(crate) fn fit(x: &Matrix, labels: &[usize], k: usize, hidden: &[usize], config: &TrainConfig, lr: f64) -> Result<Vec<f64>, ModelError> {
    let sizes = layer_sizes(x.cols, hidden, k);
    let mut params = init_params(&sizes, labels, config.seed);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let batch = config.batch_for(x.rows);
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mut stream = rng::stream(rng::derive_named(config.seed, "mlp-batches"));
    let mut t = 0i32;
    for epoch in 0..config.epochs {
        if batch < x.rows {
            order.shuffle(&mut stream);
        }
        for chunk in order.chunks(batch) {
            let (loss, grad) = loss_and_grad_rows(&params, &sizes, x, labels, chunk);
            if !loss.is_finite() {
                return Err(ModelError::Diverged(epoch));
            }
            t += 1;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for i in 0..params.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::Diverged(config.epochs));
    }
    Ok(params)
}
