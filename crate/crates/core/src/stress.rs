//! Stress scenarios: feature shifts, model swaps and random-label ablations,
//! compared against the unmodified network.
//!
//! Baseline and scenario simulations share every per-rep seed, so their
//! difference carries no extra sampling noise from independent streams.
//! Output histograms feed the KL divergence; accuracy metrics come only from
//! an explicit labelled evaluation table.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::Table;
use crate::dist::{kl_histograms, DistSpec};
use crate::graph::{validate, Dag, NodeId, NodeKind, ValidationResult};
use crate::models::{self, argmax, TrainedModel};
use crate::plan::EvalError;
use crate::rng;
use crate::score::score_table;
use crate::simulate::{run_simulation, SimulationResult, DEFAULT_BINS};
use crate::training::{label_column, InputBuilder, TrainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StressError {
    /// A scenario entry that does not fit the network; `pointer` is the JSON
    /// pointer of the entry inside the scenario document.
    #[error("{pointer}: {detail}")]
    Scenario { pointer: String, detail: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("evaluation table: {0}")]
    EvalData(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("auc needs both classes among the labels")]
    SingleClass,
    #[error("length mismatch: {0} scores, {1} labels")]
    Length(usize, usize),
}

/// Mann-Whitney AUC; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `positive`. Precision is 0 when nothing is
/// predicted positive, recall is 0 when no label is positive, and F1 is 0
/// when both are.
pub fn classification_metrics(pred: &[usize], labels: &[usize], positive: usize) -> Result<ClassMetrics, MetricError> {
    if pred.len() != labels.len() {
        return Err(MetricError::Length(pred.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(ClassMetrics { precision, recall, f1 })
}

/// Indices of a class-balanced subset: every row of the rarest class and a
/// seeded uniform draw without replacement of equally many rows from each
/// other class. Returned in ascending order.
pub fn balanced_indices(labels: &[usize], seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let m = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut stream = rng::stream(seed);
    let mut out = Vec::new();
    for rows in by_class.values() {
        let mut picked = rand::seq::index::sample(&mut stream, rows.len(), m).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|k| rows[k]));
    }
    out.sort_unstable();
    out
}

/// Metrics of the output node on a labelled table. For a binary output the
/// positive class is index 1 and is predicted when its probability is at
/// least 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_rows: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub full: EvalMetrics,
    /// The same metrics on a class-balanced subset of the table.
    pub balanced: EvalMetrics,
    /// Accuracy of every model node that has a label column in the table.
    pub model_accuracy: BTreeMap<String, f64>,
}

fn output_metrics(probs: &[&Vec<f64>], labels: &[usize]) -> Result<EvalMetrics, MetricError> {
    let binary = probs.first().is_some_and(|p| p.len() == 2);
    let pred: Vec<usize> = probs.iter().map(|p| if binary { usize::from(p[1] >= 0.5) } else { argmax(p) }).collect();
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    let accuracy = hits as f64 / labels.len().max(1) as f64;
    if !binary {
        return Ok(EvalMetrics { n_rows: labels.len(), accuracy, auc: None, precision: None, recall: None, f1: None });
    }
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let auc = match auc(&scores, &truth) {
        Ok(a) => Some(a),
        Err(MetricError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    let m = classification_metrics(&pred, labels, 1)?;
    Ok(EvalMetrics { n_rows: labels.len(), accuracy, auc, precision: Some(m.precision), recall: Some(m.recall), f1: Some(m.f1) })
}

/// Scores `eval` with `dag` and summarises output and model accuracy.
pub fn evaluate(dag: &Dag, eval: &Table, seed: u64) -> Result<RunMetrics, StressError> {
    let scores = score_table(dag, eval)?;
    let out_node = dag.try_node(dag.output().as_str()).map_err(EvalError::from)?;
    let read_labels = |node: &crate::graph::Node| -> Result<Option<Vec<Option<usize>>>, StressError> {
        let column = label_column(node);
        if !eval.has_column(&column) {
            return Ok(None);
        }
        let v = eval.values_as(&column, node).map_err(|e| StressError::EvalData(e.to_string()))?;
        Ok(Some(v.into_iter().map(|x| x.and_then(|x| x.as_discrete())).collect()))
    };
    let out_labels = read_labels(out_node)?.ok_or_else(|| StressError::EvalData(format!("no label column '{}' for output node", label_column(out_node))))?;
    let out_scores = scores.of(out_node.id.as_str()).expect("output is a model");
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (k, &r) in scores.rows.iter().enumerate() {
        if let Some(l) = out_labels[r] {
            probs.push(&out_scores[k]);
            labels.push(l);
        }
    }
    if labels.is_empty() {
        return Err(StressError::EvalData("no labelled rows with complete features".into()));
    }
    let full = output_metrics(&probs, &labels)?;
    let keep = balanced_indices(&labels, rng::derive_named(seed, "balanced-eval"));
    let bp: Vec<&Vec<f64>> = keep.iter().map(|&i| probs[i]).collect();
    let bl: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let balanced = output_metrics(&bp, &bl)?;

    let mut model_accuracy = BTreeMap::new();
    for node in dag.nodes().iter().filter(|n| n.is_model()) {
        let Some(ml) = read_labels(node)? else { continue };
        let s = scores.of(node.id.as_str()).expect("model scored");
        let (mut hit, mut n) = (0usize, 0usize);
        for (k, &r) in scores.rows.iter().enumerate() {
            if let Some(l) = ml[r] {
                n += 1;
                hit += usize::from(argmax(&s[k]) == l);
            }
        }
        if n > 0 {
            model_accuracy.insert(node.id.to_string(), hit as f64 / n as f64);
        }
    }
    Ok(RunMetrics { full, balanced, model_accuracy })
}

/// What a scenario changes relative to the baseline network.
#[derive(Clone, Debug, Default)]
pub struct Scenario {
    pub overrides: BTreeMap<NodeId, DistSpec>,
    pub swaps: BTreeMap<NodeId, Arc<TrainedModel>>,
    /// Models retrained on permuted labels.
    pub ablate: Vec<NodeId>,
}

impl Scenario {
    pub fn is_empty(&self) -> bool {
        self.overrides.is_empty() && self.swaps.is_empty() && self.ablate.is_empty()
    }

    pub fn override_feature(mut self, id: &str, dist: DistSpec) -> Self {
        self.overrides.insert(id.into(), dist);
        self
    }

    pub fn swap(mut self, id: &str, model: Arc<TrainedModel>) -> Self {
        self.swaps.insert(id.into(), model);
        self
    }

    pub fn ablate(mut self, id: &str) -> Self {
        self.ablate.push(id.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub reps: usize,
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
    /// Laplace pseudo-count added to every bin before the KL; 0 keeps the
    /// raw histograms and allows an infinite divergence.
    #[serde(default)]
    pub kl_smoothing: f64,
}

impl RunConfig {
    pub fn new(reps: usize, samples: usize, seed: u64) -> Self {
        RunConfig { reps, samples, bins: DEFAULT_BINS, seed, kl_smoothing: 0.0 }
    }
}

/// Labelled training rows, needed to retrain ablated models.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub table: &'a Table,
    pub gold_inputs: bool,
}

fn scenario_err(pointer: String, detail: impl Into<String>) -> StressError {
    StressError::Scenario { pointer, detail: detail.into() }
}

/// JSON-pointer escaping of one reference token.
fn token(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

/// The network with the scenario's overrides, swaps and ablations applied;
/// `dag` itself is untouched.
pub fn apply_scenario(dag: &Dag, s: &Scenario, train: Option<TrainingData>, seed: u64) -> Result<Dag, StressError> {
    let mut out = dag.clone();
    for (id, spec) in &s.overrides {
        let ptr = format!("/overrides/{}", token(id.as_str()));
        let node = dag.node(id.as_str()).ok_or_else(|| scenario_err(ptr.clone(), format!("unknown node '{id}'")))?;
        let NodeKind::Feature(old) = &node.kind else {
            return Err(scenario_err(ptr, format!("'{id}' is a model node; only features take distribution overrides")));
        };
        spec.validate().map_err(|e| scenario_err(ptr.clone(), e.to_string()))?;
        if spec.n_categories() != old.n_categories() || spec.is_conditional() != old.is_conditional() {
            return Err(scenario_err(ptr, format!("override has {:?} categories, '{id}' has {:?}", spec.n_categories(), old.n_categories())));
        }
        let mut spec = spec.clone();
        keep_labels(&mut spec, old);
        let mut n = node.clone();
        n.kind = NodeKind::Feature(spec);
        out = out.with_node(n).map_err(|e| scenario_err(ptr, e.to_string()))?;
    }
    for (id, model) in &s.swaps {
        let ptr = format!("/swaps/{}", token(id.as_str()));
        out = install_model(&out, id.as_str(), model.clone()).map_err(|d| scenario_err(ptr, d))?;
    }
    for (k, id) in s.ablate.iter().enumerate() {
        let ptr = format!("/ablate/{k}");
        let node = dag.node(id.as_str()).ok_or_else(|| scenario_err(ptr.clone(), format!("unknown node '{id}'")))?;
        if !node.is_model() {
            return Err(scenario_err(ptr, format!("'{id}' is a feature node; only models can be ablated")));
        }
        let train = train.ok_or_else(|| scenario_err(ptr.clone(), "ablation needs the training table"))?;
        let base = dag.trained_model(id.as_str()).map_err(|e| scenario_err(ptr.clone(), e.to_string()))?;
        let (x, y) = InputBuilder::new(dag, train.table, train.gold_inputs).training_set(id.as_str())?;
        let permuted_seed = rng::derive_named(seed, &format!("ablate/{id}"));
        let retrained = models::retrain_random_labels(base, &x, &y, permuted_seed).map_err(|e| scenario_err(ptr.clone(), e.to_string()))?;
        out = install_model(&out, id.as_str(), Arc::new(retrained)).map_err(|d| scenario_err(ptr, d))?;
    }
    if let ValidationResult::Violations(v) = validate(&out) {
        let detail = v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(scenario_err(String::new(), detail));
    }
    Ok(out)
}

/// Carries the old labels into an unlabelled override, and keeps a one-hot
/// feature one-hot when the override is written as a plain categorical.
fn keep_labels(spec: &mut DistSpec, old: &DistSpec) {
    if let (DistSpec::Categorical { probs, labels }, DistSpec::OneHotCategorical { .. }) = (&*spec, old) {
        *spec = DistSpec::OneHotCategorical { probs: probs.clone(), labels: labels.clone() };
    }
    let old_labels = old.labels().to_vec();
    match spec {
        DistSpec::Categorical { labels, .. } | DistSpec::OneHotCategorical { labels, .. } | DistSpec::ConditionalCategorical { labels, .. }
            if labels.is_empty() =>
        {
            *labels = old_labels;
        }
        _ => {}
    }
}

/// Replaces model node `id`'s predictor after checking its input schema.
pub fn install_model(dag: &Dag, id: &str, model: Arc<TrainedModel>) -> Result<Dag, String> {
    let node = dag.node(id).ok_or_else(|| format!("unknown node '{id}'"))?;
    let NodeKind::Model(mref) = &node.kind else {
        return Err(format!("'{id}' is a feature node; only models can be swapped"));
    };
    let wanted = dag.model_spec(id).map_err(|e| e.to_string())?;
    model.spec.check_compatible(&wanted).map_err(|e| e.to_string())?;
    let mut n = node.clone();
    let mut m = mref.clone();
    m.architecture = model.spec.architecture.clone();
    m.trained = Some(model);
    n.kind = NodeKind::Model(m);
    dag.with_node(n).map_err(|e| e.to_string())
}

/// KL serialised as a number, or the string `"inf"` when infinite.
pub mod kl_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub const INFINITY: &str = "inf";

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(INFINITY)
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(t) if t == INFINITY => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub simulation: SimulationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
}

/// Effect of one ablation on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub node: String,
    #[serde(with = "kl_marker")]
    pub kl: f64,
    pub delta_auc: Option<f64>,
    pub delta_recall: Option<f64>,
    pub median_shift: Option<f64>,
    pub scenario_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub overrides: BTreeMap<String, DistSpec>,
    /// Node id to the replacement's architecture.
    pub swaps: BTreeMap<String, crate::models::Architecture>,
    pub ablate: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub actions: ScenarioEcho,
    pub config: RunConfig,
    /// KL(baseline || scenario) of the pooled output histograms, in nats.
    #[serde(with = "kl_marker")]
    pub kl: f64,
    pub median_shift: Option<f64>,
    pub delta_auc: Option<f64>,
    pub delta_accuracy: Option<f64>,
    pub delta_precision: Option<f64>,
    pub delta_recall: Option<f64>,
    pub delta_f1: Option<f64>,
    pub delta_precision_balanced: Option<f64>,
    pub delta_recall_balanced: Option<f64>,
    /// Scenario minus baseline accuracy per labelled model node.
    pub model_accuracy_deltas: BTreeMap<String, f64>,
    /// Individual ablations ordered by |delta_auc|, largest first.
    pub ablation_ranking: Vec<AblationEntry>,
    pub baseline: RunSummary,
    pub scenario: RunSummary,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

fn run(dag: &Dag, cfg: &RunConfig, eval: Option<&Table>) -> Result<RunSummary, StressError> {
    let simulation = run_simulation(dag, cfg.reps, cfg.samples, cfg.bins, cfg.seed)?;
    let metrics = eval.map(|t| evaluate(dag, t, cfg.seed)).transpose()?;
    Ok(RunSummary { simulation, metrics })
}

fn median(r: &RunSummary) -> Option<f64> {
    r.simulation.summary.as_ref().map(|s| s.median)
}

fn compare(base: &RunSummary, scen: &RunSummary, cfg: &RunConfig) -> Result<f64, StressError> {
    kl_histograms(&base.simulation.pooled, &scen.simulation.pooled, cfg.kl_smoothing).map_err(|e| StressError::Eval(EvalError::Config(e.to_string())))
}

/// Runs baseline and scenario and assembles the comparison.
pub fn run_stress(dag: &Dag, scenario: &Scenario, cfg: &RunConfig, train: Option<TrainingData>, eval: Option<&Table>) -> Result<StressReport, StressError> {
    let modified = apply_scenario(dag, scenario, train, cfg.seed)?;
    let baseline = run(dag, cfg, eval)?;
    let scen = run(&modified, cfg, eval)?;
    let kl = compare(&baseline, &scen, cfg)?;

    let m = |r: &RunSummary, f: fn(&RunMetrics) -> Option<f64>| r.metrics.as_ref().and_then(f);
    let d = |f: fn(&RunMetrics) -> Option<f64>| delta(m(&baseline, f), m(&scen, f));
    let mut model_accuracy_deltas = BTreeMap::new();
    if let (Some(a), Some(b)) = (&baseline.metrics, &scen.metrics) {
        for (k, v) in &a.model_accuracy {
            if let Some(w) = b.model_accuracy.get(k) {
                model_accuracy_deltas.insert(k.clone(), w - v);
            }
        }
    }

    let mut ablation_ranking = Vec::new();
    for id in &scenario.ablate {
        let (entry_kl, entry_run) = if scenario.ablate.len() == 1 && scenario.overrides.is_empty() && scenario.swaps.is_empty() {
            (kl, scen.clone())
        } else {
            let single = Scenario { ablate: vec![id.clone()], ..Scenario::default() };
            let one = run(&apply_scenario(dag, &single, train, cfg.seed)?, cfg, eval)?;
            (compare(&baseline, &one, cfg)?, one)
        };
        ablation_ranking.push(AblationEntry {
            node: id.to_string(),
            kl: entry_kl,
            delta_auc: delta(m(&baseline, |r| r.full.auc), m(&entry_run, |r| r.full.auc)),
            delta_recall: delta(m(&baseline, |r| r.full.recall), m(&entry_run, |r| r.full.recall)),
            median_shift: delta(median(&baseline), median(&entry_run)),
            scenario_auc: m(&entry_run, |r| r.full.auc),
        });
    }
    ablation_ranking.sort_by(|a, b| {
        let key = |e: &AblationEntry| e.delta_auc.map_or(f64::NEG_INFINITY, f64::abs);
        key(b).total_cmp(&key(a)).then_with(|| a.node.cmp(&b.node))
    });

    Ok(StressReport {
        actions: ScenarioEcho {
            overrides: scenario.overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            swaps: scenario.swaps.iter().map(|(k, v)| (k.to_string(), v.spec.architecture.clone())).collect(),
            ablate: scenario.ablate.iter().map(ToString::to_string).collect(),
        },
        config: cfg.clone(),
        kl,
        median_shift: delta(median(&baseline), median(&scen)),
        delta_auc: d(|r| r.full.auc),
        delta_accuracy: d(|r| Some(r.full.accuracy)),
        delta_precision: d(|r| r.full.precision),
        delta_recall: d(|r| r.full.recall),
        delta_f1: d(|r| r.full.f1),
        delta_precision_balanced: d(|r| r.balanced.precision),
        delta_recall_balanced: d(|r| r.balanced.recall),
        model_accuracy_deltas,
        ablation_ranking,
        baseline,
        scenario: scen,
    })
}

/// Shift of one or more feature distributions.
pub fn feature_shift_test(dag: &Dag, overrides: BTreeMap<NodeId, DistSpec>, eval: Option<&Table>, cfg: &RunConfig) -> Result<StressReport, StressError> {
    if overrides.is_empty() {
        return Err(scenario_err("/overrides".into(), "no overrides given"));
    }
    run_stress(dag, &Scenario { overrides, ..Scenario::default() }, cfg, None, eval)
}

/// Replacement of one model by another with the same input schema.
pub fn model_swap_test(dag: &Dag, node: &str, replacement: Arc<TrainedModel>, eval: &Table, cfg: &RunConfig) -> Result<StressReport, StressError> {
    run_stress(dag, &Scenario::default().swap(node, replacement), cfg, None, Some(eval))
}

/// Retraining of one model on permuted labels.
pub fn ablation_test(dag: &Dag, node: &str, train: TrainingData, eval: &Table, cfg: &RunConfig) -> Result<StressReport, StressError> {
    run_stress(dag, &Scenario::default().ablate(node), cfg, Some(train), Some(eval))
}
