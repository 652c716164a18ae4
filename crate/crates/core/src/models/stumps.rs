//! Gradient-boosted depth-1 trees with logistic loss.
//!
//! Two classes use one booster for class 1. More classes use one
//! one-vs-rest booster per class with normalised sigmoid outputs.
//! Layout per booster: `base`, then `rounds` x (`feature`, `threshold`,
//! `left`, `right`); leaf values already include the learning rate. A round
//! with no significant split stores an all-zero stump.

use super::{Matrix, ModelError};

const LEAF_L2: f64 = 1.0;

fn n_boosters(k: usize) -> usize {
    if k == 2 {
        1
    } else {
        k
    }
}

pub fn n_params(k: usize, rounds: usize) -> usize {
    n_boosters(k) * (1 + 4 * rounds)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn score(booster: &[f64], x: &[f64]) -> f64 {
    let mut f = booster[0];
    for s in booster[1..].chunks_exact(4) {
        let v = x[s[0] as usize];
        f += if v <= s[1] { s[2] } else { s[3] };
    }
    f
}

pub fn forward(params: &[f64], x: &[f64], k: usize, rounds: usize) -> Vec<f64> {
    let stride = 1 + 4 * rounds;
    if k == 2 {
        let p1 = sigmoid(score(&params[..stride], x));
        return vec![1.0 - p1, p1];
    }
    let mut p: Vec<f64> = params.chunks_exact(stride).map(|b| sigmoid(score(b, x))).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

struct Split {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
    gain: f64,
}

/// Soft-thresholded Newton leaf value: zero unless the leaf's gradient sum
/// exceeds `alpha`.
fn leaf(g: f64, h: f64, alpha: f64) -> (f64, f64) {
    let t = super::soft_threshold(g, alpha);
    (-t / (h + LEAF_L2), t * t / (h + LEAF_L2))
}

/// Under the no-signal hypothesis a leaf's gradient sum has variance equal
/// to its hessian sum, so `alpha = z * sqrt(H)`.
fn best_split(x: &Matrix, sorted: &[Vec<usize>], g: &[f64], h: &[f64], z: f64) -> Option<Split> {
    let g_all: f64 = g.iter().sum();
    let h_all: f64 = h.iter().sum();
    let n = g.len();
    let alpha = |h_sum: f64| z * h_sum.max(0.0).sqrt();
    let mut best: Option<Split> = None;
    for (j, order) in sorted.iter().enumerate() {
        let (mut gl, mut hl) = (0.0, 0.0);
        for pos in 0..n - 1 {
            let i = order[pos];
            gl += g[i];
            hl += h[i];
            let (a, b) = (x.data[i * x.cols + j], x.data[order[pos + 1] * x.cols + j]);
            if a == b {
                continue;
            }
            let (wl, sl) = leaf(gl, hl, alpha(hl));
            let (wr, sr) = leaf(g_all - gl, h_all - hl, alpha(h_all - hl));
            let gain = sl + sr;
            if gain > 0.0 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split { feature: j, threshold: 0.5 * (a + b), left: wl, right: wr, gain });
            }
        }
    }
    best
}

fn fit_booster(x: &Matrix, sorted: &[Vec<usize>], y: &[f64], rounds: usize, lr: f64, z: f64) -> Vec<f64> {
    let n = y.len() as f64;
    let pos: f64 = y.iter().sum();
    let base = ((pos + 0.5) / (n - pos + 0.5)).ln();
    let mut f = vec![base; y.len()];
    let mut out = Vec::with_capacity(1 + 4 * rounds);
    out.push(base);
    let mut g = vec![0.0; y.len()];
    let mut h = vec![0.0; y.len()];
    for _ in 0..rounds {
        for i in 0..y.len() {
            let p = sigmoid(f[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        match best_split(x, sorted, &g, &h, z) {
            Some(s) => {
                let (l, r) = (lr * s.left, lr * s.right);
                for (i, fi) in f.iter_mut().enumerate() {
                    *fi += if x.data[i * x.cols + s.feature] <= s.threshold { l } else { r };
                }
                out.extend([s.feature as f64, s.threshold, l, r]);
            }
            None => out.extend([0.0; 4]),
        }
    }
    out
}

pub(crate) fn fit(x: &Matrix, labels: &[usize], k: usize, rounds: usize, lr: f64, z: f64) -> Result<Vec<f64>, ModelError> {
    let sorted: Vec<Vec<usize>> = (0..x.cols)
        .map(|j| {
            let mut idx: Vec<usize> = (0..x.rows).collect();
            idx.sort_by(|&a, &b| x.data[a * x.cols + j].total_cmp(&x.data[b * x.cols + j]));
            idx
        })
        .collect();
    let targets: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let mut params = Vec::with_capacity(n_params(k, rounds));
    for t in targets {
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == t))).collect();
        params.extend(fit_booster(x, &sorted, &y, rounds, lr, z));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::Diverged(rounds));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_learned() {
        let rows: Vec<Vec<f64>> = (0..4000).map(|i| vec![(i % 10) as f64]).collect();
        let labels: Vec<usize> = (0..4000).map(|i| usize::from(i % 10 >= 6)).collect();
        let x = Matrix::from_rows(&rows);
        let p = fit(&x, &labels, 2, 30, 0.3, 4.0).unwrap();
        assert_eq!(p.len(), n_params(2, 30));
        assert!((p[2] - 5.5).abs() < 1e-12, "first split at the class boundary");
        assert!(forward(&p, &[2.0], 2, 30)[1] < 0.05);
        assert!(forward(&p, &[8.0], 2, 30)[1] > 0.95);
    }

    #[test]
    fn noise_gives_empty_stumps() {
        let rows: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i % 7) as f64, (i % 13) as f64]).collect();
        let labels: Vec<usize> = (0..1000).map(|i| usize::from((i * 2654435761usize) % 1000 < 400)).collect();
        let labels = crate::models::permute_labels(&labels, 4);
        let x = Matrix::from_rows(&rows);
        let p = fit(&x, &labels, 2, 20, 0.3, 4.0).unwrap();
        assert!(p[1..].iter().all(|&v| v == 0.0), "no significant split in pure noise");
    }

    #[test]
    fn multiclass_outputs_simplex() {
        let rows: Vec<Vec<f64>> = (0..300).map(|i| vec![(i % 3) as f64]).collect();
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let x = Matrix::from_rows(&rows);
        let p = fit(&x, &labels, 3, 25, 0.3, 4.0).unwrap();
        for v in 0..3 {
            let q = forward(&p, &[v as f64], 3, 25);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(crate::models::argmax(&q), v);
        }
    }
}
