//! Trained-network bundles on disk.
//!
//! ```text
//! bundle.json        format, tool version, run manifest, input hashes, file hashes
//! network.json       the network with fitted feature distributions
//! models/<id>.json   one trained model per model node
//! features/<id>.json one fitted distribution per feature node
//! train.csv          the table the models were trained on
//! eval.csv           held-out rows, when the data was split
//! training.json      run manifest, options and per-model summaries
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use bnstress_core::banksim::PipelineSummary;
use bnstress_core::batch::Table;
use bnstress_core::graph::{self, NodeKind, ValidationResult};
use bnstress_core::stress::install_model;
use bnstress_core::training::{ModelSummary, TrainOptions};
use bnstress_core::{Dag, DistSpec, TrainedModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, io_err, parse_json, read_bytes, read_text, write_file, CliError};
use crate::report::{RunManifest, TOOL, VERSION};

pub const FORMAT: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format: u32,
    pub tool: String,
    pub version: String,
    /// The training run; kept out of the hashed files so that reruns give
    /// identical file hashes.
    pub manifest: RunManifest,
    /// Hashes of the inputs the bundle was trained from.
    pub inputs: BTreeMap<String, String>,
    /// Hash of every file in the bundle, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

impl BundleMeta {
    /// One hash standing for the whole bundle.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(&self.files).expect("map serialises").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub options: TrainOptions,
    pub summaries: Vec<ModelSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banksim: Option<PipelineSummary>,
}

pub struct Bundle {
    pub meta: BundleMeta,
    /// Trained network.
    pub dag: Dag,
    pub train: Table,
    pub eval: Option<Table>,
    pub training: TrainingRecord,
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialises");
    s.push('\n');
    s
}

pub struct NewBundle<'a> {
    pub dag: &'a Dag,
    pub train: &'a Table,
    pub eval: Option<&'a Table>,
    pub training: &'a TrainingRecord,
    pub manifest: RunManifest,
    pub inputs: BTreeMap<String, String>,
}

impl NewBundle<'_> {
    pub fn write(&self, dir: &Path) -> Result<BundleMeta, CliError> {
        let mut files: Vec<(String, String)> = vec![("network.json".into(), self.dag.to_json_pretty() + "\n")];
        for node in self.dag.nodes() {
            match &node.kind {
                NodeKind::Feature(d) => files.push((format!("features/{}.json", node.id), pretty(d))),
                NodeKind::Model(_) => {
                    let m = self.dag.trained_model(node.id.as_str()).map_err(domain)?;
                    files.push((format!("models/{}.json", node.id), pretty(m.as_ref())));
                }
            }
        }
        files.push(("train.csv".into(), self.train.to_csv_string()));
        if let Some(eval) = self.eval {
            files.push(("eval.csv".into(), eval.to_csv_string()));
        }
        files.push(("training.json".into(), pretty(self.training)));

        for sub in ["models", "features"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        let mut hashes = BTreeMap::new();
        for (rel, body) in &files {
            write_file(&dir.join(rel), body)?;
            hashes.insert(rel.clone(), sha256_hex(body.as_bytes()));
        }
        let meta = BundleMeta {
            format: FORMAT,
            tool: TOOL.into(),
            version: VERSION.into(),
            manifest: self.manifest.clone(),
            inputs: self.inputs.clone(),
            files: hashes,
        };
        write_file(&dir.join("bundle.json"), pretty(&meta))?;
        Ok(meta)
    }
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    Table::read(path).map_err(|e| domain(format!("{}: {e}", path.display())))
}

impl Bundle {
    /// Loads and checks a bundle: every recorded hash matches, the network
    /// validates, every model node has its model and every feature file
    /// agrees with the network.
    pub fn load(dir: &Path) -> Result<Bundle, CliError> {
        let meta_path = dir.join("bundle.json");
        let meta: BundleMeta = parse_json(&read_text(&meta_path)?, &meta_path.display().to_string())?;
        if meta.format != FORMAT {
            return Err(domain(format!("bundle format {} is not supported (expected {FORMAT})", meta.format)));
        }
        for (rel, want) in &meta.files {
            let got = sha256_hex(&read_bytes(&dir.join(rel))?);
            if &got != want {
                return Err(domain(format!("bundle file {rel} does not match its recorded hash")));
            }
        }
        let bad = |what: &str| domain(format!("bundle lacks {what}"));
        for rel in ["network.json", "train.csv", "training.json"] {
            if !meta.files.contains_key(rel) {
                return Err(bad(rel));
            }
        }

        let mut dag: Dag = parse_json(&read_text(&dir.join("network.json"))?, "bundle network.json")?;
        if let ValidationResult::Violations(v) = graph::validate(&dag) {
            let lines: Vec<String> = v.iter().map(ToString::to_string).collect();
            return Err(domain(format!("bundle network is invalid:\n{}", lines.join("\n"))));
        }
        for node in dag.nodes().to_vec() {
            let id = node.id.as_str();
            match &node.kind {
                NodeKind::Model(_) => {
                    let rel = format!("models/{id}.json");
                    if !meta.files.contains_key(&rel) {
                        return Err(bad(&rel));
                    }
                    let m: TrainedModel = parse_json(&read_text(&dir.join(&rel))?, &format!("bundle {rel}"))?;
                    dag = install_model(&dag, id, Arc::new(m)).map_err(|e| domain(format!("bundle {rel}: {e}")))?;
                }
                NodeKind::Feature(d) => {
                    let rel = format!("features/{id}.json");
                    if !meta.files.contains_key(&rel) {
                        return Err(bad(&rel));
                    }
                    let f: DistSpec = parse_json(&read_text(&dir.join(&rel))?, &format!("bundle {rel}"))?;
                    if &f != d {
                        return Err(domain(format!("bundle {rel} disagrees with network.json")));
                    }
                }
            }
        }
        let training: TrainingRecord = parse_json(&read_text(&dir.join("training.json"))?, "bundle training.json")?;
        let train = read_table(&dir.join("train.csv"))?;
        let eval = if meta.files.contains_key("eval.csv") { Some(read_table(&dir.join("eval.csv"))?) } else { None };
        Ok(Bundle { meta, dag, train, eval, training })
    }
}
