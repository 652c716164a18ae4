use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use bnstress_core::banksim::{self, PipelineConfig};
use bnstress_core::batch::Table;
use bnstress_core::graph::{self, ValidationResult};
use bnstress_core::models::permute_labels;
use bnstress_core::rng;
use bnstress_core::simulate::{run_simulation, DEFAULT_BINS};
use bnstress_core::stress::{run_stress, RunConfig, TrainingData};
use bnstress_core::training::{train_network, TrainOptions};
use bnstress_core::Dag;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bundle::{sha256_hex, Bundle, NewBundle, TrainingRecord};
use crate::error::{domain, parse_json, read_bytes, read_text, CliError};
use crate::report::{Format, Report, RunManifest};
use crate::scenario;

pub const DEFAULT_REPS: usize = 100;
pub const DEFAULT_SAMPLES: usize = 5000;

pub fn validate(network: &Path) -> Result<(), CliError> {
    let text = read_text(network)?;
    let dag: Dag = match serde_json::from_str(&text) {
        Ok(d) => d,
        Err(e) => {
            println!("parse: {e}");
            return Err(domain(format!("{} is not a valid network", network.display())));
        }
    };
    match graph::validate(&dag) {
        ValidationResult::Ok => {
            println!("ok: {} nodes ({} features, {} models), output '{}'", dag.nodes().len(), dag.n_features(), dag.n_models(), dag.output());
            Ok(())
        }
        ValidationResult::Violations(v) => {
            for x in &v {
                println!("{x}");
            }
            Err(domain(format!("{} violation(s) in {}", v.len(), network.display())))
        }
    }
}

fn load_network(path: &Path) -> Result<Dag, CliError> {
    let dag: Dag = parse_json(&read_text(path)?, &path.display().to_string())?;
    if let ValidationResult::Violations(v) = graph::validate(&dag) {
        let lines: Vec<String> = v.iter().map(ToString::to_string).collect();
        return Err(domain(format!("invalid network {}:\n{}", path.display(), lines.join("\n"))));
    }
    Ok(dag)
}

/// Options of `train --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    /// Feed upper models the lower models' gold labels.
    pub gold_inputs: bool,
    pub fit_features: bool,
    /// Share of a labelled table held out as `eval.csv`.
    pub eval_fraction: f64,
    /// Preparation of raw BankSim transactions.
    pub banksim: PipelineConfig,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig { gold_inputs: false, fit_features: true, eval_fraction: 0.0, banksim: PipelineConfig::default() }
    }
}

fn first_line_headers(bytes: &[u8]) -> Vec<String> {
    let line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    String::from_utf8_lossy(line).trim().split(',').map(|h| h.trim().trim_matches('\'').trim_matches('"').to_owned()).collect()
}

fn split_table(table: &Table, fraction: f64, seed: u64) -> Result<(Table, Option<Table>), CliError> {
    if fraction == 0.0 {
        return Ok((table.clone(), None));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(domain("config /eval_fraction: must lie in [0, 1)"));
    }
    let n = table.n_rows();
    let order = permute_labels(&(0..n).collect::<Vec<_>>(), rng::derive_named(seed, "split"));
    let n_eval = (fraction * n as f64).round() as usize;
    let (eval, train) = order.split_at(n_eval);
    let (mut train, mut eval) = (train.to_vec(), eval.to_vec());
    train.sort_unstable();
    eval.sort_unstable();
    Ok((table.select_rows(&train), Some(table.select_rows(&eval))))
}

pub fn train(network: &Path, data: &Path, out: &Path, seed: u64, config: Option<&Path>) -> Result<(), CliError> {
    let started = Instant::now();
    let net_bytes = read_bytes(network)?;
    let dag = load_network(network)?;
    let (cfg, cfg_hash) = match config {
        Some(p) => {
            let text = read_text(p)?;
            (parse_json::<TrainFileConfig>(&text, &p.display().to_string())?, Some(sha256_hex(text.as_bytes())))
        }
        None => (TrainFileConfig::default(), None),
    };
    let bytes = read_bytes(data)?;
    let raw = banksim::is_raw_banksim(&first_line_headers(&bytes));
    let (train_t, eval_t, pipeline) = if raw {
        let records = banksim::read_records(bytes.as_slice()).map_err(|e| domain(format!("{}: {e}", data.display())))?;
        let p = banksim::prepare(&records, &cfg.banksim, seed).map_err(domain)?;
        let c = &p.summary.counts;
        println!("banksim: {} rows ({} normal, {} fraud)", c.normal + c.fraud, c.normal, c.fraud);
        let d = &p.summary.decision_rows;
        println!("banksim: {} train / {} eval rows; decision model sees {} normal / {} fraud", p.summary.train_rows, p.summary.eval_rows, d.normal, d.fraud);
        (p.train, Some(p.eval), Some(p.summary))
    } else {
        let table = Table::from_reader(bytes.as_slice()).map_err(|e| domain(format!("{}: {e}", data.display())))?;
        let (t, e) = split_table(&table, cfg.eval_fraction, seed)?;
        (t, e, None)
    };

    let options = TrainOptions { seed, gold_inputs: cfg.gold_inputs, fit_features: cfg.fit_features };
    let (trained, summaries) = train_network(&dag, &train_t, &options).map_err(domain)?;
    for s in &summaries {
        println!("{}: {} rows, train accuracy {:.4}, loss {:.4}", s.node, s.n_rows, s.train_accuracy, s.final_loss);
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("network".to_owned(), sha256_hex(&net_bytes));
    inputs.insert("data".to_owned(), sha256_hex(&bytes));
    if let Some(h) = cfg_hash {
        inputs.insert("config".to_owned(), h);
    }
    let echo = json!({
        "inputs": inputs,
        "data_format": if raw { "banksim" } else { "table" },
        "config": cfg,
    });
    std::fs::create_dir_all(out).map_err(|e| crate::error::io_err(out, e))?;
    let training = TrainingRecord { options, summaries, banksim: pipeline };
    let manifest = RunManifest::new("train", echo, seed, started);
    let meta = NewBundle { dag: &trained, train: &train_t, eval: eval_t.as_ref(), training: &training, manifest, inputs }.write(out)?;
    println!("bundle {} written to {}", &meta.fingerprint()[..12], out.display());
    Ok(())
}

fn check_sizes(reps: usize, samples: usize, bins: usize) -> Result<(), CliError> {
    for (name, v) in [("reps", reps), ("samples", samples), ("bins", bins)] {
        if v == 0 {
            return Err(domain(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

fn announce(paths: &[std::path::PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn simulate(bundle: &Path, reps: usize, samples: usize, bins: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    check_sizes(reps, samples, bins)?;
    let b = Bundle::load(bundle)?;
    let result = run_simulation(&b.dag, reps, samples, bins, seed).map_err(domain)?;
    let echo = json!({ "bundle": b.meta.fingerprint(), "reps": reps, "samples": samples, "bins": bins });
    let report = Report::Simulation { manifest: RunManifest::new("simulate", echo, seed, started), result: Box::new(result) };
    announce(&report.write(out)?);
    Ok(())
}

pub struct StressArgs<'a> {
    pub bundle: &'a Path,
    pub scenario: &'a Path,
    pub eval: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: u64,
    pub reps: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<usize>,
    pub kl_smoothing: Option<f64>,
}

pub fn stress(a: StressArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let text = read_text(a.scenario)?;
    let base = a.scenario.parent().unwrap_or(Path::new("."));
    let sf = scenario::parse(&text, base)?;
    if sf.scenario.is_empty() {
        return Err(domain("scenario has no actions"));
    }
    if let Some(s) = sf.seed {
        if s != a.seed {
            return Err(domain(format!("scenario /seed: {s} conflicts with --seed {}", a.seed)));
        }
    }
    let cfg = RunConfig {
        reps: a.reps.or(sf.reps).unwrap_or(DEFAULT_REPS),
        samples: a.samples.or(sf.samples).unwrap_or(DEFAULT_SAMPLES),
        bins: a.bins.or(sf.bins).unwrap_or(DEFAULT_BINS),
        seed: a.seed,
        kl_smoothing: a.kl_smoothing.or(sf.kl_smoothing).unwrap_or(0.0),
    };
    check_sizes(cfg.reps, cfg.samples, cfg.bins)?;
    if !(cfg.kl_smoothing.is_finite() && cfg.kl_smoothing >= 0.0) {
        return Err(domain("kl_smoothing must be a non-negative number"));
    }

    let b = Bundle::load(a.bundle)?;
    let (eval, eval_source) = match a.eval {
        Some(p) => {
            let bytes = read_bytes(p)?;
            let t = Table::from_reader(bytes.as_slice()).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            (Some(t), json!(sha256_hex(&bytes)))
        }
        None if b.eval.is_some() => (b.eval.clone(), json!("bundle")),
        None => (None, serde_json::Value::Null),
    };
    let train = TrainingData { table: &b.train, gold_inputs: b.training.options.gold_inputs };
    let report = run_stress(&b.dag, &sf.scenario, &cfg, Some(train), eval.as_ref()).map_err(|e| match e {
        bnstress_core::stress::StressError::Scenario { pointer, detail } => domain(format!("scenario {pointer}: {detail}")),
        other => domain(other),
    })?;
    let echo = json!({
        "bundle": b.meta.fingerprint(),
        "scenario": sha256_hex(text.as_bytes()),
        "eval": eval_source,
        "run": cfg,
    });
    let report = Report::Stress { manifest: RunManifest::new("stress", echo, a.seed, started), result: Box::new(report) };
    announce(&report.write(a.out)?);
    Ok(())
}

pub fn report(input: &Path, format: Format) -> Result<(), CliError> {
    let r = Report::parse(&read_text(input)?)?;
    print!("{}", r.render(format));
    Ok(())
}
