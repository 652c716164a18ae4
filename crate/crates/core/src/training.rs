//! Fitting a whole network from a labelled table.
//!
//! Feature distributions are refitted from their columns. Models are trained
//! in topological order; an upper model reads its lower models' predictions
//! on the same rows, or their gold labels when `gold_inputs` is set.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{DataError, Table};
use crate::dist::{self, DistError, DistSpec, Value};
use crate::graph::{self, Dag, GraphError, Node, NodeKind};
use crate::models::{self, argmax, encode_row, Matrix, ModelError, TrainConfig};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node '{node}': {source}")]
    Data { node: String, source: DataError },
    #[error("no label column '{column}' for model '{node}'")]
    MissingLabels { node: String, column: String },
    #[error("model '{0}' has no rows with a label and complete inputs")]
    NoRows(String),
    #[error("model '{node}': {source}")]
    Model { node: String, source: ModelError },
    #[error("feature '{node}': {source}")]
    Dist { node: String, source: DistError },
    #[error("node '{node}': {detail}")]
    Encoding { node: String, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub seed: u64,
    /// Feed upper models the lower models' gold labels instead of their
    /// predictions.
    #[serde(default)]
    pub gold_inputs: bool,
    /// Refit feature distributions from the table.
    #[serde(default = "yes")]
    pub fit_features: bool,
}

fn yes() -> bool {
    true
}

impl TrainOptions {
    pub fn new(seed: u64) -> Self {
        TrainOptions { seed, gold_inputs: false, fit_features: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub node: String,
    pub n_rows: usize,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Encoded inputs of one model on the rows of a table, with memoised lower
/// model predictions.
pub struct InputBuilder<'a> {
    dag: &'a Dag,
    table: &'a Table,
    gold: bool,
    features: HashMap<String, Vec<Option<Value>>>,
    predictions: HashMap<String, Vec<Option<Vec<f64>>>>,
}

impl<'a> InputBuilder<'a> {
    pub fn new(dag: &'a Dag, table: &'a Table, gold: bool) -> Self {
        InputBuilder { dag, table, gold, features: HashMap::new(), predictions: HashMap::new() }
    }

    fn feature(&mut self, node: &Node) -> Result<&Vec<Option<Value>>, TrainError> {
        let key = node.id.to_string();
        if !self.features.contains_key(&key) {
            let v = self.table.node_values(node).map_err(|source| TrainError::Data { node: key.clone(), source })?;
            self.features.insert(key.clone(), v);
        }
        Ok(&self.features[&key])
    }

    /// Gold labels of a model node, read through its label column.
    pub fn labels(&self, node: &Node) -> Result<Vec<Option<Value>>, TrainError> {
        let column = label_column(node);
        if !self.table.has_column(&column) {
            return Err(TrainError::MissingLabels { node: node.id.to_string(), column });
        }
        self.table.values_as(&column, node).map_err(|source| TrainError::Data { node: node.id.to_string(), source })
    }

    /// Encoded input rows of model `id`; `None` where an input is missing.
    pub fn inputs(&mut self, id: &str) -> Result<Vec<Option<Vec<f64>>>, TrainError> {
        let dag = self.dag;
        let node = dag.try_node(id)?;
        let spec = dag.model_spec(id)?;
        let n = self.table.n_rows();
        let mut parent_values: Vec<Vec<Option<Value>>> = Vec::new();
        let mut parent_simplex: Vec<Option<Vec<Option<Vec<f64>>>>> = Vec::new();
        for p in &node.parents {
            let pn = dag.try_node(p.as_str())?;
            if !pn.is_model() {
                parent_values.push(self.feature(pn)?.clone());
                parent_simplex.push(None);
            } else if self.gold {
                parent_values.push(self.labels(pn)?);
                parent_simplex.push(None);
            } else {
                let preds = self.predictions(p.as_str())?.clone();
                parent_values.push(preds.iter().map(|o| o.as_ref().map(|q| Value::Discrete(argmax(q)))).collect());
                parent_simplex.push(Some(preds));
            }
        }
        let mut out = Vec::with_capacity(n);
        let mut buf = Vec::new();
        for r in 0..n {
            let vals: Option<Vec<Value>> = parent_values.iter().map(|c| c[r]).collect();
            let Some(vals) = vals else {
                out.push(None);
                continue;
            };
            let simp: Vec<Option<&[f64]>> = parent_simplex.iter().map(|s| s.as_ref().and_then(|s| s[r].as_deref())).collect();
            buf.clear();
            encode_row(&spec.inputs, &vals, &simp, &mut buf).map_err(|detail| TrainError::Encoding { node: id.to_owned(), detail })?;
            out.push(Some(buf.clone()));
        }
        Ok(out)
    }

    /// Output simplexes of trained model `id` on every row.
    pub fn predictions(&mut self, id: &str) -> Result<&Vec<Option<Vec<f64>>>, TrainError> {
        if !self.predictions.contains_key(id) {
            let model = self.dag.trained_model(id)?.clone();
            let inputs = self.inputs(id)?;
            let preds = inputs
                .into_iter()
                .map(|x| x.map(|x| model.predict_proba(&x)).transpose())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| TrainError::Model { node: id.to_owned(), source })?;
            self.predictions.insert(id.to_owned(), preds);
        }
        Ok(&self.predictions[id])
    }

    /// The training matrix of model `id`: rows with a label and complete
    /// inputs.
    pub fn training_set(&mut self, id: &str) -> Result<(Matrix, Vec<usize>), TrainError> {
        let node = self.dag.try_node(id)?.clone();
        let labels = self.labels(&node)?;
        let inputs = self.inputs(id)?;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (x, l) in inputs.into_iter().zip(labels) {
            if let (Some(x), Some(l)) = (x, l) {
                rows.push(x);
                y.push(l.as_discrete().expect("model labels are discrete"));
            }
        }
        if rows.is_empty() {
            return Err(TrainError::NoRows(id.to_owned()));
        }
        Ok((Matrix::from_rows(&rows), y))
    }
}

pub fn label_column(node: &Node) -> String {
    node.model_ref().and_then(|m| m.label.clone()).unwrap_or_else(|| node.id.to_string())
}

/// Training config of a model node with its per-node seed.
pub fn node_train_config(node: &Node, seed: u64) -> TrainConfig {
    let base = node.model_ref().and_then(|m| m.train.clone()).unwrap_or_default();
    base.with_seed(rng::derive_named(seed, node.id.as_str()))
}

/// Refits every feature whose column is present. Gamma fits use only the
/// strictly positive values; conditional tables keep rows without counts.
pub fn fit_features(dag: &Dag, table: &Table) -> Result<Dag, TrainError> {
    let mut out = dag.clone();
    for node in dag.nodes() {
        let NodeKind::Feature(d) = &node.kind else { continue };
        if !table.has_column(node.id.as_str()) {
            continue;
        }
        let err = |source| TrainError::Dist { node: node.id.to_string(), source };
        let values = table.node_values(node).map_err(|source| TrainError::Data { node: node.id.to_string(), source })?;
        let fitted = match d {
            DistSpec::Categorical { probs, labels } | DistSpec::OneHotCategorical { probs, labels } => {
                let mut counts = vec![0u64; probs.len()];
                values.iter().flatten().for_each(|v| counts[v.as_discrete().expect("discrete")] += 1);
                let probs = match dist::fit_categorical(&counts, &node.prior).map_err(err)? {
                    DistSpec::Categorical { probs, .. } => probs,
                    _ => unreachable!(),
                };
                if matches!(d, DistSpec::OneHotCategorical { .. }) {
                    DistSpec::OneHotCategorical { probs, labels: labels.clone() }
                } else {
                    DistSpec::Categorical { probs, labels: labels.clone() }
                }
            }
            DistSpec::ConditionalCategorical { table: rows, labels } => {
                let k = rows[0].len();
                let mut counts = vec![vec![0u64; k]; rows.len()];
                let parents: Vec<(Node, Vec<Option<Value>>)> = node
                    .parents
                    .iter()
                    .map(|p| {
                        let pn = dag.try_node(p.as_str())?.clone();
                        let column = if pn.is_model() { label_column(&pn) } else { pn.id.to_string() };
                        let v = table.values_as(&column, &pn).map_err(|source| TrainError::Data { node: node.id.to_string(), source })?;
                        Ok((pn, v))
                    })
                    .collect::<Result<_, TrainError>>()?;
                'rows: for (r, v) in values.iter().enumerate() {
                    let Some(v) = v else { continue };
                    let mut row = 0;
                    for (pn, pv) in &parents {
                        let Some(pv) = pv[r] else { continue 'rows };
                        row = row * pn.n_categories().expect("discrete parent") + pv.as_discrete().expect("discrete");
                    }
                    counts[row][v.as_discrete().expect("discrete")] += 1;
                }
                let table = rows
                    .iter()
                    .zip(&counts)
                    .map(|(old, c)| {
                        if c.iter().sum::<u64>() == 0 && node.prior.is_none() {
                            return Ok(old.clone());
                        }
                        match dist::fit_categorical(c, &node.prior).map_err(err)? {
                            DistSpec::Categorical { probs, .. } => Ok(probs),
                            _ => unreachable!(),
                        }
                    })
                    .collect::<Result<_, TrainError>>()?;
                DistSpec::ConditionalCategorical { table, labels: labels.clone() }
            }
            DistSpec::TruncatedNormal { lo, hi, .. } => {
                let xs: Vec<f64> = values.iter().flatten().map(|v| v.as_f64()).collect();
                dist::fit_truncated_normal(&xs, *lo, *hi).map_err(err)?
            }
            DistSpec::Gamma { .. } => {
                let xs: Vec<f64> = values.iter().flatten().map(|v| v.as_f64()).filter(|&x| x > 0.0).collect();
                dist::fit_gamma(&xs).map_err(err)?
            }
        };
        let mut replacement = node.clone();
        replacement.kind = NodeKind::Feature(fitted);
        out = out.with_node(replacement)?;
    }
    Ok(out)
}

/// Trains every model node bottom-up and returns the trained network.
pub fn train_network(dag: &Dag, table: &Table, opts: &TrainOptions) -> Result<(Dag, Vec<ModelSummary>), TrainError> {
    if table.n_rows() == 0 {
        return Err(TrainError::Data { node: dag.output().to_string(), source: DataError::Empty });
    }
    let mut current = if opts.fit_features { fit_features(dag, table)? } else { dag.clone() };
    let mut summaries = Vec::new();
    for id in graph::topological_order(&current)? {
        let node = current.try_node(id.as_str())?.clone();
        let NodeKind::Model(mref) = &node.kind else { continue };
        let (x, y) = InputBuilder::new(&current, table, opts.gold_inputs).training_set(id.as_str())?;
        let spec = current.model_spec(id.as_str())?;
        let cfg = node_train_config(&node, opts.seed);
        let model = models::train(&spec, &x, &y, &cfg).map_err(|source| TrainError::Model { node: id.to_string(), source })?;
        let acc = model.accuracy(&x, &y).map_err(|source| TrainError::Model { node: id.to_string(), source })?;
        summaries.push(ModelSummary { node: id.to_string(), n_rows: y.len(), train_accuracy: acc, final_loss: model.training_meta.final_loss });
        let mut replacement = node.clone();
        replacement.kind = NodeKind::Model(mref.clone().with_trained(Arc::new(model)));
        current = current.with_node(replacement)?;
    }
    Ok((current, summaries))
}
