//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Set `BANKSIM_CSV` to a raw BankSim file to use it instead of the
//! synthetic stand-in.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use bnstress_core::dist::{kl_divergence, kl_histograms, Value};
use bnstress_core::fixtures::{self, toy_overrides, toy_replacement, toy_stumps, TOY_SEED};
use bnstress_core::inference::{alr, alr_inverse, enumerate_joint, exact_output_distribution, rwm_sample, McmcConfig, Posterior};
use bnstress_core::models::{self, linear, mlp, InputColumn, Matrix, ModelSpec, TrainConfig};
use bnstress_core::simulate::{ancestral_sample, histogram};
use bnstress_core::stress::{ablation_test, auc, feature_shift_test, model_swap_test, RunConfig, TrainingData};
use bnstress_core::{rng, Architecture, Dag, DistSpec, Encoding, Node, NodeId, PriorSpec};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn toy_fixture() -> (bnstress_core::batch::Table, bnstress_core::batch::Table, Dag) {
    let (train, eval) = fixtures::toy_split(TOY_SEED).unwrap();
    let dag = fixtures::toy_trained(&train, TOY_SEED).unwrap();
    (train, eval, dag)
}

fn full_run() -> RunConfig {
    RunConfig::new(100, 5000, 42)
}

fn oracle() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let dag = fixtures::random_discrete_network(seed, 6, 4);
        let exact = exact_output_distribution(&dag).unwrap();
        let exact = exact.probs(None).unwrap().to_vec();
        let n = 100_000;
        let batch = ancestral_sample(&dag, n, 1000 + seed).unwrap();
        let mut est = vec![0.0; exact.len()];
        for v in batch.column(dag.output().as_str()).unwrap() {
            est[v.as_discrete().unwrap()] += 1.0 / n as f64;
        }
        worst = worst.max(exact.iter().zip(&est).map(|(a, b)| (a - b).abs()).sum());
    }
    let (_, _, dag) = toy_fixture();
    let mut total = 0.0;
    enumerate_joint(&dag, 1e6, |_, lp| total += lp.exp()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    ensure(
        worst <= 0.01 && (total - 1.0).abs() <= 1e-6 && secs < 30.0,
        format!("max L1 {worst:.5} over 20 networks, toy enumeration sums to {total:.9}, {secs:.1} s"),
    )
}

fn finite_difference_error(loss: impl Fn(&[f64]) -> (f64, Vec<f64>), at: &[f64]) -> f64 {
    let (_, g) = loss(at);
    let h = 1e-6;
    let mut p = at.to_vec();
    let mut num = vec![0.0; at.len()];
    for j in 0..at.len() {
        p[j] = at[j] + h;
        let up = loss(&p).0;
        p[j] = at[j] - h;
        let dn = loss(&p).0;
        p[j] = at[j];
        num[j] = (up - dn) / (2.0 * h);
    }
    let diff = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
    diff / norm.max(1e-12)
}

fn random_problem(seed: u64, rows: usize, d: usize, k: usize) -> (Matrix, Vec<usize>, rng::Stream) {
    let mut r = rng::stream(seed);
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let y = (0..rows).map(|_| r.random_range(0..k)).collect();
    (Matrix::from_rows(&x), y, r)
}

fn gradients() -> Outcome {
    let mut worst_linear: f64 = 0.0;
    let mut worst_mlp: f64 = 0.0;
    for point in 0..10u64 {
        let (k, d) = (2 + point as usize % 3, 3 + point as usize % 4);
        let (x, y, mut r) = random_problem(point, 12, d, k);
        let params: Vec<f64> = (0..linear::n_params(d, k)).map(|_| r.random_range(-1.5..1.5)).collect();
        worst_linear = worst_linear.max(finite_difference_error(|p| linear::loss_and_grad(p, &x, &y, k), &params));

        let sizes = mlp::layer_sizes(d, &[6, 4][..1 + point as usize % 2], k);
        let (x, y, mut r) = random_problem(50 + point, 10, d, k);
        let params: Vec<f64> = (0..mlp::n_params(&sizes)).map(|_| r.random_range(-1.0..1.0)).collect();
        worst_mlp = worst_mlp.max(finite_difference_error(|p| mlp::loss_and_grad(p, &sizes, &x, &y), &params));
    }
    ensure(worst_linear <= 1e-4 && worst_mlp <= 1e-4, format!("max relative error: linear {worst_linear:.2e}, mlp {worst_mlp:.2e}"))
}

fn mcmc() -> Outcome {
    let started = Instant::now();
    let x = Node::feature("x", DistSpec::categorical(vec![0.5, 0.5])).with_prior(PriorSpec::dirichlet(vec![1.0, 1.0]));
    let dag = Dag::new(vec![x], "x");
    let values: Vec<Value> = [0, 0, 0, 1].into_iter().map(Value::Discrete).collect();
    let mut columns = BTreeMap::new();
    columns.insert(NodeId::from("x"), values);
    let batch = bnstress_core::batch::SampleBatch { n_rows: 4, columns, simplexes: BTreeMap::new() };
    let post = Posterior::new(&dag, &batch).unwrap();
    let chain = rwm_sample(|t| post.log_density(t).unwrap_or(f64::NEG_INFINITY), &alr(&[0.5, 0.5]), &McmcConfig::new(10_000, 1_000, 1.0, 101)).unwrap();
    let mean = chain.draws.iter().map(|t| alr_inverse(t)[0]).sum::<f64>() / chain.draws.len() as f64;

    let chain = rwm_sample(|x| -0.5 * x[0] * x[0], &[0.0], &McmcConfig::new(50_000, 1_000, 1.0, 202)).unwrap();
    let n = chain.draws.len() as f64;
    let m = chain.draws.iter().map(|d| d[0]).sum::<f64>() / n;
    let var = chain.draws.iter().map(|d| (d[0] - m).powi(2)).sum::<f64>() / (n - 1.0);
    let secs = started.elapsed().as_secs_f64();
    ensure(
        (mean - 4.0 / 6.0).abs() <= 0.02 && (var - 1.0).abs() <= 0.1 && secs < 20.0,
        format!("posterior mean {mean:.4} (want 0.6667), normal variance {var:.4}, {secs:.1} s"),
    )
}

fn ablation() -> Outcome {
    let (train, eval, dag) = toy_fixture();
    let data = TrainingData { table: &train, gold_inputs: false };
    let strong = ablation_test(&dag, "m2", data, &eval, &full_run()).unwrap();
    let strong_auc = strong.scenario.metrics.as_ref().unwrap().full.auc.unwrap();
    let weak = ablation_test(&dag, "m1", data, &eval, &full_run()).unwrap();
    let weak_delta = weak.delta_auc.unwrap();
    ensure(
        (strong_auc - 0.5).abs() <= 0.03 && (strong.kl.is_infinite() || strong.kl > 2.0) && weak_delta.abs() < 0.05,
        format!("ablate m2: AUC {strong_auc:.4}, KL {}; ablate m1: delta AUC {weak_delta:+.4}", strong.kl),
    )
}

fn feature_shifts() -> Outcome {
    let (_, eval, dag) = toy_fixture();
    let shift = |ids: &[&str]| {
        let overrides: BTreeMap<NodeId, DistSpec> =
            toy_overrides().into_iter().filter(|(id, _)| ids.contains(id)).map(|(id, d)| (NodeId::from(id), d)).collect();
        feature_shift_test(&dag, overrides, Some(&eval), &full_run()).unwrap().kl
    };
    let singles: Vec<f64> = ["x1", "x2", "x3"].iter().map(|id| shift(&[id])).collect();
    let all = shift(&["x1", "x2", "x3"]);
    let mut null = BTreeMap::new();
    null.insert(NodeId::from("x3"), dag.node("x3").unwrap().dist().unwrap().clone());
    let null = feature_shift_test(&dag, null, Some(&eval), &full_run()).unwrap().kl;
    ensure(
        singles.iter().all(|&k| k > 0.02) && null <= 0.01 && singles.iter().all(|&k| all > k),
        format!("KL x1 {:.4}, x2 {:.4}, x3 {:.4}, all {all:.4}, null {null:.4}", singles[0], singles[1], singles[2]),
    )
}

fn swap() -> Outcome {
    let (train, eval, dag) = toy_fixture();
    let stumps = toy_replacement(&dag, &train, "m2", toy_stumps(), TOY_SEED).unwrap();
    let r = model_swap_test(&dag, "m2", Arc::new(stumps), &eval, &full_run()).unwrap();
    let (d_auc, gain) = (r.delta_auc.unwrap(), r.model_accuracy_deltas["m2"]);
    ensure(d_auc > 0.0 && gain >= 0.05, format!("delta AUC {d_auc:+.4}, m2 accuracy {:+.1} points", 100.0 * gain))
}

fn banksim_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csv = match std::env::var("BANKSIM_CSV") {
        Ok(p) => p,
        Err(_) => {
            let p = dir.path().join("banksim.csv");
            synthetic_banksim(&p, 60_000, 1);
            s(&p)
        }
    };
    let bundle = s(&dir.path().join("bundle"));
    let out = dir.path().join("stress.json");
    let started = Instant::now();
    let t =
        bnstress(&["train", "--network", &banksim("network.json"), "--data", &csv, "--config", &banksim("train_config.json"), "--out", &bundle, "--seed", "1"]);
    if t.code != 0 {
        return Err(format!("train exited {}: {}", t.code, t.stderr.trim()));
    }
    let r = bnstress(&["stress", "--bundle", &bundle, "--scenario", &banksim("scenarios/ablate_both.json"), "--out", &s(&out), "--seed", "1"]);
    if r.code != 0 {
        return Err(format!("stress exited {}: {}", r.code, r.stderr.trim()));
    }
    let secs = started.elapsed().as_secs_f64();
    let report = json(&out);
    let config = &report["result"]["config"];
    let training = json(&Path::new(&bundle).join("training.json"));
    let decision = &training["banksim"]["decision_rows"];
    let (normal, fraud) = (decision["normal"].as_u64().unwrap(), decision["fraud"].as_u64().unwrap());
    let entry = |id: &str| {
        let e = report["result"]["ablation_ranking"].as_array().unwrap().iter().find(|e| e["node"] == id).unwrap().clone();
        (e["delta_recall"].as_f64().unwrap(), e["median_shift"].as_f64().unwrap())
    };
    let (r1, m1) = entry("m1");
    let (r2, m2) = entry("m2");
    ensure(
        config["reps"] == 100 && config["samples"] == 5000 && secs < 300.0 && normal == fraud && r1 <= -0.05 && r2 <= -0.05 && m1 > 0.0 && m2 < 0.0,
        format!(
            "{secs:.1} s, balanced {normal}/{fraud}; ablate m1: recall {:+.1} points, median {m1:+.4}; ablate m2: recall {:+.1} points, median {m2:+.4}",
            100.0 * r1,
            100.0 * r2
        ),
    )
}

fn cli_outputs(dir: &Path, threads: &str) -> Vec<(String, String)> {
    let bundle = s(&dir.join("bundle"));
    let mut captured = Vec::new();
    let mut run = |name: &str, args: &[&str]| {
        let mut all = vec!["--threads", threads];
        all.extend(args);
        let r = bnstress(&all);
        assert_eq!(r.code, 0, "{name}: {}", r.stderr);
        captured.push((format!("{name} stdout"), r.stdout.replace(&s(dir), "<dir>")));
    };
    run("validate", &["validate", "--network", &toy("network.json")]);
    run("train", &["train", "--network", &toy("network.json"), "--data", &toy("train.csv"), "--out", &bundle, "--seed", "9"]);
    run("simulate", &["simulate", "--bundle", &bundle, "--reps", "30", "--samples", "1000", "--seed", "9", "--out", &s(&dir.join("sim.json"))]);
    for scenario in ["exp4_all", "exp6_swap_m2", "ablate_both"] {
        let out = s(&dir.join(format!("{scenario}.json")));
        run(
            scenario,
            &[
                "stress",
                "--bundle",
                &bundle,
                "--scenario",
                &toy(&format!("scenarios/{scenario}.json")),
                "--eval",
                &toy("eval.csv"),
                "--reps",
                "30",
                "--samples",
                "1000",
                "--seed",
                "9",
                "--out",
                &out,
            ],
        );
        run("report md", &["report", "--in", &out]);
        run("report csv", &["report", "--in", &out, "--format", "csv"]);
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    for p in files {
        let rel = p.strip_prefix(dir).unwrap().display().to_string();
        captured.push((rel, without_duration(&std::fs::read_to_string(&p).unwrap())));
    }
    captured
}

fn determinism() -> Outcome {
    let runs: Vec<_> = ["1", "8", "1", "8"]
        .iter()
        .map(|t| {
            let dir = tempfile::tempdir().unwrap();
            cli_outputs(dir.path(), t)
        })
        .collect();
    for r in &runs[1..] {
        if r.len() != runs[0].len() {
            return Err("different file sets".into());
        }
        for ((name, a), (_, b)) in runs[0].iter().zip(r) {
            if a != b {
                return Err(format!("{name} differs between runs"));
            }
        }
    }
    Ok(format!("{} outputs identical across 4 runs at 1 and 8 threads", runs[0].len()))
}

fn random_simplex(r: &mut rng::Stream, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| r.random_range(1e-9..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn properties() -> Outcome {
    let mut r = rng::stream(2024);
    let mut failures = Vec::new();

    let kl_ok = (0..1000).all(|_| {
        let k = r.random_range(2..12);
        let (p, q) = (random_simplex(&mut r, k), random_simplex(&mut r, k));
        kl_divergence(&p, &q).unwrap() >= 0.0
    });
    if !kl_ok {
        failures.push("kl");
    }

    let auc_ok = (0..100).all(|_| {
        let n = r.random_range(2..200);
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(-5.0..5.0f64) * 10.0).round() / 10.0).collect();
        let base = auc(&scores, &labels).unwrap();
        let (a, b) = (r.random_range(0.1..10.0), r.random_range(-3.0..3.0));
        [scores.iter().map(|s| a * s + b).collect::<Vec<_>>(), scores.iter().map(|s| s.exp()).collect(), scores.iter().map(|s| s.powi(3) + s).collect()]
            .iter()
            .all(|t| (auc(t, &labels).unwrap() - base).abs() < 1e-12)
    });
    if !auc_ok {
        failures.push("auc");
    }

    let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let labels: Vec<usize> = rows
        .iter()
        .map(|x| {
            if x[0] + x[1] > 0.5 {
                2
            } else if x[2] > 0.0 {
                1
            } else {
                0
            }
        })
        .collect();
    let inputs: Vec<InputColumn> = (0..4).map(|j| InputColumn::new(format!("f{j}").as_str().into(), Encoding::Numeric, None)).collect();
    for arch in [Architecture::LinearSoftmax, Architecture::Mlp { hidden: vec![8, 4] }, Architecture::BoostedStumps { rounds: 20, learning_rate: 0.3 }] {
        let spec = ModelSpec { architecture: arch, inputs: inputs.clone(), n_classes: 3 };
        let m = models::train(&spec, &Matrix::from_rows(&rows), &labels, &TrainConfig { epochs: 50, ..TrainConfig::default() }).unwrap();
        let ok = (0..1000).all(|i| {
            let span = if i % 10 == 0 { 1e4 } else { 3.0 };
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-span..span)).collect();
            let p = m.predict_proba(&x).unwrap();
            p.len() == 3 && p.iter().all(|v| (0.0..=1.0).contains(v)) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12
        });
        if !ok {
            failures.push("simplex");
        }
    }

    let hist_ok = (0..200).all(|_| {
        let n = r.random_range(1..500);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=1.0)).collect();
        let h = histogram(&values, r.random_range(1..40)).unwrap();
        h.total() as usize == n && (h.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12 && kl_histograms(&h, &h, 0.0).unwrap() == 0.0
    });
    if !hist_ok {
        failures.push("histogram");
    }

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = r.random_range(2..8);
        let p: Vec<f64> = random_simplex(&mut r, k).iter().map(|x| x.max(1e-6)).collect();
        let s: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / s).collect();
        let back = alr_inverse(&alr(&p));
        worst = p.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    if worst > 1e-12 {
        failures.push("round trip");
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            format!("kl, auc, simplex, histogram and round-trip checks hold (worst round trip {worst:.1e})")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle),
        ("gradient checks", gradients),
        ("mcmc correctness", mcmc),
        ("model ablation", ablation),
        ("feature shifts", feature_shifts),
        ("model swap", swap),
        ("banksim pipeline", banksim_pipeline),
        ("determinism", determinism),
        ("property suites", properties),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
