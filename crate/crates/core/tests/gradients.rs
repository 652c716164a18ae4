use bnstress_core::models::{linear, mlp, Matrix};
use bnstress_core::rng;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_problem(seed: u64, rows: usize, d: usize, k: usize) -> (Matrix, Vec<usize>) {
    let mut r = rng::stream(seed);
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect();
    let y = (0..rows).map(|_| r.random_range(0..k)).collect();
    (Matrix::from_rows(&x), y)
}

fn random_params(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Relative error of the analytic gradient against central differences.
fn check(loss: impl Fn(&[f64]) -> (f64, Vec<f64>), at: &[f64]) -> f64 {
    let (_, g) = loss(at);
    let h = 1e-6;
    let mut num = vec![0.0; at.len()];
    let mut p = at.to_vec();
    for j in 0..at.len() {
        p[j] = at[j] + h;
        let up = loss(&p).0;
        p[j] = at[j] - h;
        let dn = loss(&p).0;
        p[j] = at[j];
        num[j] = (up - dn) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
    diff / norm.max(1e-12)
}

#[test]
fn linear_softmax_gradient_matches_finite_differences() {
    for point in 0..10 {
        let (k, d) = (2 + point % 3, 3 + point % 4);
        let (x, y) = random_problem(point as u64, 12, d, k);
        let params = random_params(100 + point as u64, linear::n_params(d, k), 1.0);
        let err = check(|p| linear::loss_and_grad(p, &x, &y, k), &params);
        assert!(err <= 1e-4, "point {point}: {err}");
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for point in 0..10 {
        let (k, d) = (2 + point % 3, 2 + point % 3);
        let sizes = mlp::layer_sizes(d, &[5, 4][..1 + point % 2], k);
        let (x, y) = random_problem(200 + point as u64, 10, d, k);
        let params = random_params(300 + point as u64, mlp::n_params(&sizes), 0.7);
        let err = check(|p| mlp::loss_and_grad(p, &sizes, &x, &y), &params);
        assert!(err <= 1e-4, "point {point}: {err}");
    }
}
