//! Report documents, their rendering as Markdown or CSV, and the histogram
//! CSV exports written next to them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bnstress_core::dist::Histogram;
use bnstress_core::simulate::{histogram_csv, SimulationResult};
use bnstress_core::stress::StressReport;
use serde::{Deserialize, Serialize};

use crate::error::{parse_json, write_file, CliError};

pub const TOOL: &str = "bnstress";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What produced an artifact. `duration_ms` is the only field that differs
/// between reruns with identical inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub tool: String,
    pub version: String,
    pub duration_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, started: Instant) -> Self {
        RunManifest {
            command: command.to_owned(),
            config,
            seed,
            tool: TOOL.to_owned(),
            version: VERSION.to_owned(),
            duration_ms: started.elapsed().as_millis() as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Simulation { manifest: RunManifest, result: Box<SimulationResult> },
    Stress { manifest: RunManifest, result: Box<StressReport> },
}

impl Report {
    pub fn parse(text: &str) -> Result<Report, CliError> {
        parse_json(text, "report")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match (self, format) {
            (Report::Simulation { manifest, result }, Format::Md) => simulation_md(manifest, result),
            (Report::Simulation { result, .. }, Format::Csv) => simulation_csv(result),
            (Report::Stress { manifest, result }, Format::Md) => stress_md(manifest, result),
            (Report::Stress { result, .. }, Format::Csv) => stress_csv(result),
        }
    }

    /// Writes the report and its CSV exports; returns the paths written.
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        let mut written = vec![out.to_path_buf()];
        write_file(out, self.to_json())?;
        let sibling = |suffix: &str| {
            let stem = out.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
            out.with_file_name(format!("{stem}.{suffix}.csv"))
        };
        let files: Vec<(PathBuf, String)> = match self {
            Report::Simulation { result, .. } => {
                vec![(sibling("pooled"), histogram_csv(&result.pooled)), (sibling("per_rep"), per_rep_csv(&[("simulation", result)]))]
            }
            Report::Stress { result, .. } => vec![
                (sibling("histograms"), paired_csv(&result.baseline.simulation.pooled, &result.scenario.simulation.pooled)),
                (sibling("per_rep"), per_rep_csv(&[("baseline", &result.baseline.simulation), ("scenario", &result.scenario.simulation)])),
                (sibling("summary"), stress_csv(result)),
            ],
        };
        for (path, body) in files {
            write_file(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Md,
    Csv,
}

fn per_rep_csv(runs: &[(&str, &SimulationResult)]) -> String {
    let mut out = String::from("run,rep,bin_lo,bin_hi,count,frequency\n");
    for (name, r) in runs {
        for (rep, h) in r.per_rep.iter().enumerate() {
            for k in 0..h.n_bins() {
                let _ = writeln!(out, "{name},{rep},{:?},{:?},{},{:?}", h.bin_edges[k], h.bin_edges[k + 1], h.counts[k], h.frequencies[k]);
            }
        }
    }
    out
}

fn paired_csv(a: &Histogram, b: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,baseline_count,baseline_frequency,scenario_count,scenario_frequency\n");
    for k in 0..a.n_bins() {
        let _ = writeln!(out, "{:?},{:?},{},{:?},{},{:?}", a.bin_edges[k], a.bin_edges[k + 1], a.counts[k], a.frequencies[k], b.counts[k], b.frequencies[k]);
    }
    out
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.4}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), num)
}

/// One summary row per compared scenario: the full scenario first, then
/// each ablation on its own when the scenario holds more than that one
/// ablation.
fn stress_rows(r: &StressReport) -> Vec<[String; 5]> {
    let mut parts = Vec::new();
    for id in r.actions.overrides.keys() {
        parts.push(format!("override {id}"));
    }
    for (id, arch) in &r.actions.swaps {
        parts.push(format!("swap {id} -> {}", arch_name(arch)));
    }
    for id in &r.actions.ablate {
        parts.push(format!("ablate {id}"));
    }
    let mut rows = vec![[parts.join("; "), num(r.kl), opt(r.delta_auc), opt(r.delta_recall), opt(r.median_shift)]];
    let lone_ablation = r.actions.ablate.len() == 1 && r.actions.overrides.is_empty() && r.actions.swaps.is_empty();
    if !lone_ablation {
        for e in &r.ablation_ranking {
            rows.push([format!("ablate {}", e.node), num(e.kl), opt(e.delta_auc), opt(e.delta_recall), opt(e.median_shift)]);
        }
    }
    rows
}

fn arch_name(a: &bnstress_core::Architecture) -> String {
    serde_json::to_value(a).ok().and_then(|v| v.get("type").and_then(|t| t.as_str().map(str::to_owned))).unwrap_or_else(|| format!("{a:?}"))
}

const STRESS_COLUMNS: [&str; 5] = ["scenario", "kl", "delta_auc", "delta_recall", "median_shift"];

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn stress_csv(r: &StressReport) -> String {
    let mut out = STRESS_COLUMNS.join(",");
    out.push('\n');
    for row in stress_rows(r) {
        out.push_str(&row.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn md_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

fn stress_md(m: &RunManifest, r: &StressReport) -> String {
    let mut out = String::from("# Stress report\n\n");
    let _ = writeln!(out, "{} {}, seed {}, {} reps x {} samples, {} bins\n", m.tool, m.version, r.config.seed, r.config.reps, r.config.samples, r.config.bins);
    let rows: Vec<Vec<String>> = stress_rows(r).into_iter().map(Vec::from).collect();
    md_table(&mut out, &STRESS_COLUMNS, &rows);

    let (b, s) = (&r.baseline, &r.scenario);
    let mut rows = Vec::new();
    let med = |x: &bnstress_core::stress::RunSummary| x.simulation.summary.as_ref().map(|s| s.median);
    rows.push(vec!["median output".to_owned(), opt(med(b)), opt(med(s)), opt(r.median_shift)]);
    if let (Some(bm), Some(sm)) = (&b.metrics, &s.metrics) {
        let line = |name: &str, x: Option<f64>, y: Option<f64>, d: Option<f64>| vec![name.to_owned(), opt(x), opt(y), opt(d)];
        rows.push(line("auc", bm.full.auc, sm.full.auc, r.delta_auc));
        rows.push(line("accuracy", Some(bm.full.accuracy), Some(sm.full.accuracy), r.delta_accuracy));
        rows.push(line("precision", bm.full.precision, sm.full.precision, r.delta_precision));
        rows.push(line("recall", bm.full.recall, sm.full.recall, r.delta_recall));
        rows.push(line("f1", bm.full.f1, sm.full.f1, r.delta_f1));
        rows.push(line("precision (balanced)", bm.balanced.precision, sm.balanced.precision, r.delta_precision_balanced));
        rows.push(line("recall (balanced)", bm.balanced.recall, sm.balanced.recall, r.delta_recall_balanced));
        for (node, acc) in &bm.model_accuracy {
            let after = sm.model_accuracy.get(node).copied();
            rows.push(line(&format!("{node} accuracy"), Some(*acc), after, r.model_accuracy_deltas.get(node).copied()));
        }
    }
    out.push('\n');
    md_table(&mut out, &["metric", "baseline", "scenario", "delta"], &rows);
    out
}

fn simulation_rows(r: &SimulationResult) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = r
        .class_frequencies
        .iter()
        .enumerate()
        .map(|(rep, f)| {
            let mut row = vec![rep.to_string(), num(r.rep_medians[rep])];
            row.extend(f.iter().map(|&v| num(v)));
            row
        })
        .collect();
    let mut pooled = vec!["pooled".to_owned(), opt(r.summary.as_ref().map(|s| s.median))];
    pooled.extend(r.pooled_class_frequencies.iter().map(|&v| num(v)));
    rows.push(pooled);
    rows
}

fn simulation_header(r: &SimulationResult) -> Vec<String> {
    let mut h = vec!["rep".to_owned(), "median".to_owned()];
    h.extend(r.output_classes.iter().cloned());
    h
}

fn simulation_csv(r: &SimulationResult) -> String {
    let mut out = simulation_header(r).iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in simulation_rows(r) {
        out.push_str(&row.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn simulation_md(m: &RunManifest, r: &SimulationResult) -> String {
    let mut out = String::from("# Simulation report\n\n");
    let _ = writeln!(
        out,
        "{} {}, seed {}, {} reps x {} samples, {} bins, statistic {}\n",
        m.tool, m.version, r.seed, r.reps, r.samples_per_rep, r.bins, r.statistic
    );
    let header = simulation_header(r);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    md_table(&mut out, &header, &simulation_rows(r));
    out
}
