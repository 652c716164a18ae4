//! Scenario documents.
//!
//! ```json
//! {"overrides": {"x3": {"type": "categorical", "probs": [0.1, 0.2, 0.7]}},
//!  "swaps": {"m2": "models/m2_stumps.json"},
//!  "ablate": ["m1"],
//!  "reps": 100, "samples": 5000, "bins": 20, "seed": 42, "kl_smoothing": 0.0}
//! ```
//!
//! Swap paths are relative to the scenario file. Errors name the offending
//! entry by JSON pointer.

use std::path::Path;
use std::sync::Arc;

use bnstress_core::stress::Scenario;
use bnstress_core::{DistSpec, TrainedModel};
use serde_json::Value;

use crate::error::{domain, parse_json, read_text, CliError};

#[derive(Clone, Debug, Default)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub reps: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<usize>,
    pub seed: Option<u64>,
    pub kl_smoothing: Option<f64>,
}

const KEYS: [&str; 8] = ["overrides", "swaps", "ablate", "reps", "samples", "bins", "seed", "kl_smoothing"];

fn at(pointer: &str, detail: impl std::fmt::Display) -> CliError {
    domain(format!("scenario {pointer}: {detail}"))
}

fn token(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn count(doc: &Value, key: &str) -> Result<Option<u64>, CliError> {
    match doc.get(key) {
        None => Ok(None),
        Some(v) => v.as_u64().filter(|&n| n >= 1).map(Some).ok_or_else(|| at(&format!("/{key}"), "expected a positive integer")),
    }
}

fn size(doc: &Value, key: &str) -> Result<Option<usize>, CliError> {
    count(doc, key)?.map(|n| usize::try_from(n).map_err(|_| at(&format!("/{key}"), "too large"))).transpose()
}

/// Parses a scenario; `base` is the directory swap paths are resolved in.
pub fn parse(text: &str, base: &Path) -> Result<ScenarioFile, CliError> {
    let doc: Value = parse_json(text, "scenario")?;
    let obj = doc.as_object().ok_or_else(|| at("", "expected a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(at(&format!("/{}", token(k)), "unknown key"));
    }
    let mut s = Scenario::default();

    if let Some(v) = obj.get("overrides") {
        let map = v.as_object().ok_or_else(|| at("/overrides", "expected an object of node -> distribution"))?;
        for (id, spec) in map {
            let ptr = format!("/overrides/{}", token(id));
            let spec: DistSpec = serde_json::from_value(spec.clone()).map_err(|e| at(&ptr, e))?;
            s = s.override_feature(id, spec);
        }
    }
    if let Some(v) = obj.get("swaps") {
        let map = v.as_object().ok_or_else(|| at("/swaps", "expected an object of node -> model path"))?;
        for (id, path) in map {
            let ptr = format!("/swaps/{}", token(id));
            let rel = path.as_str().ok_or_else(|| at(&ptr, "expected a model file path"))?;
            let file = base.join(rel);
            let text = read_text(&file).map_err(|e| match e {
                CliError::Io(d) => CliError::Io(format!("scenario {ptr}: {d}")),
                other => other,
            })?;
            let model: TrainedModel = serde_json::from_str(&text).map_err(|e| at(&ptr, format!("{}: {e}", file.display())))?;
            s = s.swap(id, Arc::new(model));
        }
    }
    if let Some(v) = obj.get("ablate") {
        let list = v.as_array().ok_or_else(|| at("/ablate", "expected a list of model nodes"))?;
        for (k, id) in list.iter().enumerate() {
            let id = id.as_str().ok_or_else(|| at(&format!("/ablate/{k}"), "expected a node id"))?;
            if s.ablate.iter().any(|a| a.as_str() == id) {
                return Err(at(&format!("/ablate/{k}"), format!("'{id}' is listed twice")));
            }
            s = s.ablate(id);
        }
    }
    let kl_smoothing = match obj.get("kl_smoothing") {
        None => None,
        Some(v) => Some(v.as_f64().filter(|x| x.is_finite() && *x >= 0.0).ok_or_else(|| at("/kl_smoothing", "expected a non-negative number"))?),
    };
    let seed = match obj.get("seed") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| at("/seed", "expected a non-negative integer"))?),
    };
    Ok(ScenarioFile { scenario: s, reps: size(&doc, "reps")?, samples: size(&doc, "samples")?, bins: size(&doc, "bins")?, seed, kl_smoothing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        parse(text, Path::new(".")).unwrap_err().to_string()
    }

    #[test]
    fn reads_every_field() {
        let f = parse(
            r#"{"overrides":{"x3":{"type":"categorical","probs":[0.1,0.2,0.7]}},"ablate":["m1"],"reps":3,"samples":10,"bins":5,"seed":9,"kl_smoothing":0.5}"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(f.scenario.overrides.len(), 1);
        assert_eq!(f.scenario.ablate.len(), 1);
        assert_eq!((f.reps, f.samples, f.bins, f.seed, f.kl_smoothing), (Some(3), Some(10), Some(5), Some(9), Some(0.5)));
    }

    #[test]
    fn pointers_name_the_entry() {
        assert!(err(r#"{"overrides":{"x3":{"type":"nope"}}}"#).starts_with("scenario /overrides/x3:"));
        assert!(err(r#"{"ablate":["m1", 3]}"#).starts_with("scenario /ablate/1:"));
        assert!(err(r#"{"reps":0}"#).starts_with("scenario /reps:"));
        assert!(err(r#"{"colour":1}"#).starts_with("scenario /colour:"));
        assert!(err(r#"[]"#).starts_with("scenario :"));
    }

    #[test]
    fn missing_swap_file_is_io() {
        let e = parse(r#"{"swaps":{"m2":"no/such/model.json"}}"#, Path::new("/nonexistent")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("/swaps/m2"));
    }
}
