use bnstress_core::dist::Value;
use bnstress_core::fixtures::{self, M1_GIVEN_X1, M2_POS, X1, X2, X3, Y_POS};
use bnstress_core::inference::{enumerate_joint, exact_output_distribution, joint_log_prob, Assignment};
use bnstress_core::simulate::ancestral_sample;
use bnstress_core::Dag;

fn sampled_output(dag: &Dag, n: usize, seed: u64) -> Vec<f64> {
    let k = dag.node(dag.output().as_str()).unwrap().n_categories().unwrap();
    let batch = ancestral_sample(dag, n, seed).unwrap();
    let mut freq = vec![0.0; k];
    for v in batch.column(dag.output().as_str()).unwrap() {
        freq[v.as_discrete().unwrap()] += 1.0 / n as f64;
    }
    freq
}

#[test]
fn exact_marginal_matches_sampling_on_random_networks() {
    for seed in 0..20 {
        let dag = fixtures::random_discrete_network(seed, 6, 4);
        assert!(bnstress_core::graph::validate(&dag).is_ok(), "seed {seed}");
        let exact = exact_output_distribution(&dag).unwrap();
        let exact = exact.probs(None).unwrap();
        let est = sampled_output(&dag, 100_000, 1000 + seed);
        let l1: f64 = exact.iter().zip(&est).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 0.01, "seed {seed}: l1 {l1}");
    }
}

/// The toy truth network's output marginal summed by hand from its tables.
fn toy_truth_marginal_by_hand() -> f64 {
    let mut pos = 0.0;
    for (a, pa) in X1.iter().enumerate() {
        for (b, pb) in X2.iter().enumerate() {
            for (c, pc) in X3.iter().enumerate() {
                for (m1, pm1) in M1_GIVEN_X1[a].iter().enumerate() {
                    let q2 = M2_POS[a][b][c];
                    for (m2, pm2) in [1.0 - q2, q2].iter().enumerate() {
                        pos += pa * pb * pc * pm1 * pm2 * Y_POS[m1][m2];
                    }
                }
            }
        }
    }
    pos
}

#[test]
fn toy_truth_marginal_matches_hand_sum() {
    let exact = exact_output_distribution(&fixtures::toy_truth()).unwrap();
    let p = exact.probs(None).unwrap();
    assert!((p[1] - toy_truth_marginal_by_hand()).abs() < 1e-12);
}

#[test]
fn toy_joint_is_the_product_of_its_tables() {
    let dag = fixtures::toy_truth();
    let cases = [(0, 0, 0, 0, 0, 0), (1, 2, 1, 2, 1, 1), (0, 1, 2, 1, 0, 1), (1, 0, 2, 0, 1, 0)];
    for (a, b, c, m1, m2, y) in cases {
        let q2 = M2_POS[a][b][c];
        let py = Y_POS[m1][m2];
        let want = X1[a] * X2[b] * X3[c] * M1_GIVEN_X1[a][m1] * if m2 == 1 { q2 } else { 1.0 - q2 } * if y == 1 { py } else { 1.0 - py };
        let assignment: Assignment =
            [("x1", a), ("x2", b), ("x3", c), ("m1", m1), ("m2", m2), ("y", y)].into_iter().map(|(k, v)| (k.into(), Value::Discrete(v))).collect();
        let got = joint_log_prob(&dag, &assignment).unwrap();
        assert!((got - want.ln()).abs() < 1e-12, "{:?}", (a, b, c, m1, m2, y));
    }
}

#[test]
fn enumeration_of_trained_toy_network_sums_to_one() {
    let (train, _) = fixtures::toy_split(fixtures::TOY_SEED).unwrap();
    let dag = fixtures::toy_trained(&train, fixtures::TOY_SEED).unwrap();
    let mut total = 0.0;
    let mut states = 0;
    enumerate_joint(&dag, 1e6, |_, lp| {
        total += lp.exp();
        states += 1;
    })
    .unwrap();
    assert_eq!(states, 2 * 3 * 3 * 3 * 2 * 2);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn enumeration_refuses_large_state_spaces() {
    let dag = fixtures::toy_truth();
    assert!(enumerate_joint(&dag, 10.0, |_, _| {}).is_err());
}
