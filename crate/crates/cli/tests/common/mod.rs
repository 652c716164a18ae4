#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn bnstress(args: &[&str]) -> Run {
    bnstress_env(args, &[])
}

pub fn bnstress_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bnstress"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn toy(rel: &str) -> String {
    fixtures().join("toy").join(rel).display().to_string()
}

pub fn banksim(rel: &str) -> String {
    fixtures().join("banksim").join(rel).display().to_string()
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Trains the toy network into `dir/bundle` and returns the bundle path.
pub fn toy_bundle(dir: &Path) -> String {
    let bundle = s(&dir.join("bundle"));
    let r = bnstress(&["train", "--network", &toy("network.json"), "--data", &toy("train.csv"), "--out", &bundle, "--seed", "7"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    bundle
}

/// Report text without the wall-clock line.
pub fn without_duration(text: &str) -> String {
    text.lines().filter(|l| !l.contains("\"duration_ms\"")).collect::<Vec<_>>().join("\n")
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a synthetic BankSim transaction file.
pub fn synthetic_banksim(path: &Path, rows: usize, seed: u64) {
    let f = std::fs::File::create(path).unwrap();
    bnstress_core::banksim::write_records(&bnstress_core::banksim::synthetic(rows, seed), f).unwrap();
}
