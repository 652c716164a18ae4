//! A validated network compiled to index form for repeated evaluation.

use std::sync::Arc;

use thiserror::Error;

use crate::dist::{DistError, DistSpec, PriorSpec, Value};
use crate::graph::{self, Dag, GraphError, Node, NodeKind};
use crate::models::{encode_row, Encoding, InputColumn, ModelError, TrainedModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node '{node}': {source}")]
    Model { node: String, source: ModelError },
    #[error("node '{node}': {source}")]
    Dist { node: String, source: DistError },
    #[error("node '{node}': {detail}")]
    Encoding { node: String, detail: String },
    #[error("no value for node '{0}'")]
    MissingValue(String),
    #[error("node '{0}' is continuous; exact enumeration needs discrete nodes")]
    Continuous(String),
    #[error("joint state space of {states:e} states exceeds the cap of {cap:e}")]
    StateSpace { states: f64, cap: f64 },
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{0}")]
    Config(String),
}

pub(crate) struct CompiledModel {
    pub model: Arc<TrainedModel>,
    pub inputs: Vec<InputColumn>,
    /// `(lambda, prior mean)` of an output-smoothing Dirichlet prior.
    pub smoothing: Option<(f64, Vec<f64>)>,
}

pub struct Plan<'a> {
    pub dag: &'a Dag,
    pub order: Vec<usize>,
    pub parents: Vec<Vec<usize>>,
    pub(crate) models: Vec<Option<CompiledModel>>,
    /// Category count of every node, `None` for continuous ones.
    pub cards: Vec<Option<usize>>,
    pub output: usize,
}

impl<'a> Plan<'a> {
    /// Fails on an invalid network or an untrained model node. A feature
    /// output node is accepted.
    pub fn new(dag: &'a Dag) -> Result<Self, EvalError> {
        let order = graph::evaluation_order(dag)?;
        let nodes = dag.nodes();
        let parents: Vec<Vec<usize>> = nodes.iter().map(|n| n.parents.iter().map(|p| dag.index_of(p.as_str()).expect("validated")).collect()).collect();
        let mut models = Vec::with_capacity(nodes.len());
        for node in nodes {
            models.push(match &node.kind {
                NodeKind::Feature(_) => None,
                NodeKind::Model(_) => {
                    let model = dag.trained_model(node.id.as_str())?.clone();
                    let inputs = dag.model_spec(node.id.as_str())?.inputs;
                    let smoothing = match &node.prior {
                        PriorSpec::Dirichlet { smoothing, .. } if *smoothing > 0.0 => Some((*smoothing, node.prior.mean().expect("dirichlet"))),
                        _ => None,
                    };
                    Some(CompiledModel { model, inputs, smoothing })
                }
            });
        }
        let cards = nodes.iter().map(Node::n_categories).collect();
        let output = dag.index_of(dag.output().as_str()).expect("validated");
        Ok(Plan { dag, order, parents, models, cards, output })
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.dag.nodes()[i]
    }

    pub fn is_model(&self, i: usize) -> bool {
        self.models[i].is_some()
    }

    pub fn dist(&self, i: usize) -> Option<&DistSpec> {
        self.node(i).dist()
    }

    fn name(&self, i: usize) -> String {
        self.node(i).id.to_string()
    }

    /// Mixed-radix row of a conditional table, first parent most significant.
    pub fn table_row(&self, i: usize, values: &[Value]) -> Result<Option<usize>, EvalError> {
        let Some(dist) = self.dist(i) else { return Ok(None) };
        if !dist.is_conditional() {
            return Ok(None);
        }
        let mut row = 0;
        for &p in &self.parents[i] {
            let k = values[p]
                .as_discrete()
                .ok_or_else(|| EvalError::Encoding { node: self.name(i), detail: format!("conditional table needs a discrete value of '{}'", self.name(p)) })?;
            row = row * self.cards[p].expect("validated discrete parent") + k;
        }
        Ok(Some(row))
    }

    /// Output simplex of model node `i` given parent values and the
    /// simplexes of model parents (`simplex[p]` empty for features).
    pub fn model_proba(&self, i: usize, values: &[Value], simplex: &[Vec<f64>], buf: &mut Vec<f64>) -> Result<Vec<f64>, EvalError> {
        let cm = self.models[i].as_ref().expect("model node");
        let pv: Vec<Value> = self.parents[i].iter().map(|&p| values[p]).collect();
        let ps: Vec<Option<&[f64]>> = self.parents[i].iter().map(|&p| if self.is_model(p) { Some(simplex[p].as_slice()) } else { None }).collect();
        buf.clear();
        encode_row(&cm.inputs, &pv, &ps, buf).map_err(|detail| EvalError::Encoding { node: self.name(i), detail })?;
        let mut p = cm.model.predict_proba(buf).map_err(|source| EvalError::Model { node: self.name(i), source })?;
        if let Some((lambda, mean)) = &cm.smoothing {
            for (v, m) in p.iter_mut().zip(mean) {
                *v = (1.0 - lambda) * *v + lambda * m;
            }
        }
        Ok(p)
    }

    /// Conditional log probability of every node's value given its parents,
    /// filling `simplex` for model nodes on the way.
    pub fn node_log_prob(&self, i: usize, values: &[Value], simplex: &mut [Vec<f64>], buf: &mut Vec<f64>) -> Result<f64, EvalError> {
        if self.is_model(i) {
            let p = self.model_proba(i, values, simplex, buf)?;
            let k = values[i].as_discrete().ok_or_else(|| EvalError::Encoding { node: self.name(i), detail: "model node needs a class index".into() })?;
            let lp = p.get(k).map_or(f64::NEG_INFINITY, |v| v.ln());
            simplex[i] = p;
            Ok(lp)
        } else {
            let row = self.table_row(i, values)?;
            self.dist(i).expect("feature").log_prob_given(values[i], row).map_err(|source| EvalError::Dist { node: self.name(i), source })
        }
    }

    /// Whether any child reads model node `i`'s sampled class rather than
    /// its probability vector.
    pub(crate) fn class_matters(&self, i: usize) -> bool {
        let id = &self.node(i).id;
        let model_reads = self.models.iter().flatten().any(|cm| cm.inputs.iter().any(|c| &c.parent == id && c.encoding != Encoding::Proba));
        model_reads || (0..self.len()).any(|c| !self.is_model(c) && self.parents[c].contains(&i))
    }
}
