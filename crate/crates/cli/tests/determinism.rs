mod common;

use std::path::Path;

use common::*;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn pipeline(dir: &Path, threads: &str) {
    let bundle = s(&dir.join("bundle"));
    let t = |args: &[&str]| {
        let mut all = vec!["--threads", threads];
        all.extend(args);
        let r = bnstress(&all);
        assert_eq!(r.code, 0, "{}", r.stderr);
    };
    t(&["train", "--network", &toy("network.json"), "--data", &toy("train.csv"), "--out", &bundle, "--seed", "11"]);
    t(&["simulate", "--bundle", &bundle, "--reps", "20", "--samples", "500", "--seed", "5", "--out", &s(&dir.join("sim.json"))]);
    t(&[
        "stress",
        "--bundle",
        &bundle,
        "--scenario",
        &toy("scenarios/exp4_all.json"),
        "--eval",
        &toy("eval.csv"),
        "--reps",
        "20",
        "--samples",
        "500",
        "--seed",
        "5",
        "--out",
        &s(&dir.join("stress.json")),
    ]);
}

/// Compares every output file; reports only differ in `duration_ms`.
pub fn assert_same_outputs(a: &Path, b: &Path) {
    for rel in ["bundle/network.json", "bundle/models/m1.json", "bundle/models/m2.json", "bundle/models/y.json", "bundle/training.json", "bundle/train.csv"] {
        assert_eq!(read(&a.join(rel)), read(&b.join(rel)), "{rel}");
    }
    let ma = json(&a.join("bundle/bundle.json"));
    let mb = json(&b.join("bundle/bundle.json"));
    assert_eq!(ma["files"], mb["files"]);
    assert_eq!(ma["inputs"], mb["inputs"]);
    for rel in ["sim.json", "stress.json"] {
        assert_eq!(without_duration(&read(&a.join(rel))), without_duration(&read(&b.join(rel))), "{rel}");
    }
    for rel in ["sim.pooled.csv", "sim.per_rep.csv", "stress.histograms.csv", "stress.per_rep.csv", "stress.summary.csv"] {
        assert_eq!(read(&a.join(rel)), read(&b.join(rel)), "{rel}");
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    pipeline(one.path(), "1");
    pipeline(eight.path(), "8");
    assert_same_outputs(one.path(), eight.path());
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = toy_bundle(dir.path());
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let r = bnstress(&["simulate", "--bundle", &bundle, "--reps", "2", "--samples", "200", "--seed", seed, "--out", &s(&out)]);
        assert_eq!(r.code, 0);
        json(&out)["result"].clone()
    };
    assert_ne!(run("1", "a.json"), run("2", "b.json"));
    assert_eq!(run("1", "c.json"), run("1", "d.json"));
}
