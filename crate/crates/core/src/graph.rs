//! The network of feature and model nodes.
//!
//! A [`Dag`] is immutable once built. Validation never fails: it reports rule
//! violations as data so callers can list all of them at once.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistSpec, PriorSpec};
use crate::models::{Architecture, Encoding, InputColumn, ModelSpec, TrainConfig, TrainedModel};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

/// A model node's declaration plus, once trained, its predictor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelRef {
    pub architecture: Architecture,
    /// One encoding per parent; empty means the defaults of
    /// [`Encoding::default_for`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub encodings: Vec<Encoding>,
    /// Label column in training data; defaults to the node id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip)]
    pub trained: Option<Arc<TrainedModel>>,
}

impl ModelRef {
    pub fn new(architecture: Architecture) -> Self {
        ModelRef { architecture, encodings: Vec::new(), label: None, train: None, trained: None }
    }

    pub fn with_encodings(mut self, encodings: Vec<Encoding>) -> Self {
        self.encodings = encodings;
        self
    }

    pub fn with_trained(mut self, model: Arc<TrainedModel>) -> Self {
        self.trained = Some(model);
        self
    }
}

impl PartialEq for ModelRef {
    fn eq(&self, other: &Self) -> bool {
        let same_trained = match (&self.trained, &other.trained) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b) || a == b,
            _ => false,
        };
        self.architecture == other.architecture && self.encodings == other.encodings && self.label == other.label && self.train == other.train && same_trained
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Feature(DistSpec),
    Model(ModelRef),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NodeJson", into = "NodeJson")]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub parents: Vec<NodeId>,
    pub prior: PriorSpec,
    pub classes: Vec<String>,
}

impl Node {
    pub fn feature(id: &str, dist: DistSpec) -> Self {
        Node { id: id.into(), kind: NodeKind::Feature(dist), parents: Vec::new(), prior: PriorSpec::None, classes: Vec::new() }
    }

    pub fn model(id: &str, parents: &[&str], classes: &[&str], model: ModelRef) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Model(model),
            parents: parents.iter().map(|&p| p.into()).collect(),
            prior: PriorSpec::None,
            classes: classes.iter().map(|&c| c.to_owned()).collect(),
        }
    }

    pub fn with_parents(mut self, parents: &[&str]) -> Self {
        self.parents = parents.iter().map(|&p| p.into()).collect();
        self
    }

    pub fn with_prior(mut self, prior: PriorSpec) -> Self {
        self.prior = prior;
        self
    }

    pub fn is_model(&self) -> bool {
        matches!(self.kind, NodeKind::Model(_))
    }

    pub fn dist(&self) -> Option<&DistSpec> {
        match &self.kind {
            NodeKind::Feature(d) => Some(d),
            NodeKind::Model(_) => None,
        }
    }

    pub fn model_ref(&self) -> Option<&ModelRef> {
        match &self.kind {
            NodeKind::Model(m) => Some(m),
            NodeKind::Feature(_) => None,
        }
    }

    /// Number of categories (model classes), or `None` for a continuous feature.
    pub fn n_categories(&self) -> Option<usize> {
        match &self.kind {
            NodeKind::Feature(d) => d.n_categories(),
            NodeKind::Model(_) => Some(self.classes.len()),
        }
    }

    /// Category labels, falling back to the distribution's labels and then to
    /// decimal indices.
    pub fn class_labels(&self) -> Vec<String> {
        if !self.classes.is_empty() {
            return self.classes.clone();
        }
        if let Some(d) = self.dist() {
            if !d.labels().is_empty() {
                return d.labels().to_vec();
            }
        }
        (0..self.n_categories().unwrap_or(0)).map(|k| k.to_string()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: NodeId,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dist: Option<DistSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelRef>,
    #[serde(default)]
    parents: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "PriorSpec::is_none")]
    prior: PriorSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Feature,
    Model,
}

impl TryFrom<NodeJson> for Node {
    type Error = String;

    fn try_from(j: NodeJson) -> Result<Self, String> {
        let kind = match (j.kind, j.dist, j.model) {
            (KindTag::Feature, Some(d), None) => NodeKind::Feature(d),
            (KindTag::Model, None, Some(m)) => NodeKind::Model(m),
            (KindTag::Feature, _, _) => return Err(format!("feature node '{}' needs a \"dist\" and no \"model\"", j.id)),
            (KindTag::Model, _, _) => return Err(format!("model node '{}' needs a \"model\" and no \"dist\"", j.id)),
        };
        Ok(Node { id: j.id, kind, parents: j.parents, prior: j.prior, classes: j.classes })
    }
}

impl From<Node> for NodeJson {
    fn from(n: Node) -> Self {
        let (kind, dist, model) = match n.kind {
            NodeKind::Feature(d) => (KindTag::Feature, Some(d), None),
            NodeKind::Model(m) => (KindTag::Model, None, Some(m)),
        };
        NodeJson { id: n.id, kind, dist, model, parents: n.parents, prior: n.prior, classes: n.classes }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("invalid network:\n{}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("node '{0}' is not a model node")]
    NotAModel(String),
    #[error("node '{0}' is not a feature node")]
    NotAFeature(String),
    #[error("model node '{0}' has no trained predictor")]
    Untrained(String),
}

/// One broken rule, printed as `rule: detail`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "violations", rename_all = "snake_case")]
pub enum ValidationResult {
    Ok,
    Violations(Vec<Violation>),
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationResult::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationResult::Ok => &[],
            ValidationResult::Violations(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DagJson", into = "DagJson")]
pub struct Dag {
    nodes: Vec<Node>,
    output: NodeId,
    index: BTreeMap<NodeId, usize>,
}

#[derive(Serialize, Deserialize)]
struct DagJson {
    nodes: Vec<Node>,
    output: NodeId,
}

impl TryFrom<DagJson> for Dag {
    type Error = String;

    fn try_from(j: DagJson) -> Result<Self, String> {
        Ok(Dag::new(j.nodes, j.output))
    }
}

impl From<Dag> for DagJson {
    fn from(d: Dag) -> Self {
        DagJson { nodes: d.nodes, output: d.output }
    }
}

impl Dag {
    /// Builds a network without validating it. Duplicate ids resolve to the
    /// first occurrence; [`validate`] reports them.
    pub fn new(nodes: Vec<Node>, output: impl Into<NodeId>) -> Self {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            index.entry(n.id.clone()).or_insert(i);
        }
        Dag { nodes, output: output.into(), index }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> &NodeId {
        &self.output
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn try_node(&self, id: &str) -> Result<&Node, GraphError> {
        self.node(id).ok_or_else(|| GraphError::UnknownNode(id.to_owned()))
    }

    pub fn n_models(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_model()).count()
    }

    pub fn n_features(&self) -> usize {
        self.nodes.len() - self.n_models()
    }

    /// A copy with node `replacement.id` swapped for `replacement`.
    pub fn with_node(&self, replacement: Node) -> Result<Dag, GraphError> {
        let i = self.index_of(replacement.id.as_str()).ok_or_else(|| GraphError::UnknownNode(replacement.id.to_string()))?;
        let mut nodes = self.nodes.clone();
        nodes[i] = replacement;
        Ok(Dag::new(nodes, self.output.clone()))
    }

    /// Resolves a model node's input schema from its parents.
    pub fn model_spec(&self, id: &str) -> Result<ModelSpec, GraphError> {
        let node = self.try_node(id)?;
        let model = node.model_ref().ok_or_else(|| GraphError::NotAModel(id.to_owned()))?;
        let mut inputs = Vec::with_capacity(node.parents.len());
        for (j, p) in node.parents.iter().enumerate() {
            let parent = self.try_node(p.as_str())?;
            let encoding = model.encodings.get(j).copied().unwrap_or_else(|| Encoding::default_for(parent));
            inputs.push(InputColumn::new(p.clone(), encoding, parent.n_categories()));
        }
        Ok(ModelSpec { architecture: model.architecture.clone(), n_classes: node.classes.len(), inputs })
    }

    pub fn trained_model(&self, id: &str) -> Result<&Arc<TrainedModel>, GraphError> {
        let node = self.try_node(id)?;
        let model = node.model_ref().ok_or_else(|| GraphError::NotAModel(id.to_owned()))?;
        model.trained.as_ref().ok_or_else(|| GraphError::Untrained(id.to_owned()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serialises")
    }
}

/// Checks every network rule and lists the violations.
pub fn validate(dag: &Dag) -> ValidationResult {
    let mut out = Vec::new();
    let mut v = |rule: &'static str, detail: String| out.push(Violation { rule, detail });

    let mut seen = BTreeSet::new();
    for n in &dag.nodes {
        if n.id.as_str().is_empty() {
            v("empty id", "a node has an empty id".into());
        }
        if !seen.insert(n.id.as_str()) {
            v("duplicate id", format!("'{}' appears more than once", n.id));
        }
    }

    for n in &dag.nodes {
        let mut listed = BTreeSet::new();
        for p in &n.parents {
            if dag.node(p.as_str()).is_none() {
                v("unresolved parent", format!("'{}' lists unknown parent '{}'", n.id, p));
            }
            if !listed.insert(p.as_str()) {
                v("duplicate parent", format!("'{}' lists parent '{}' twice", n.id, p));
            }
        }
        match &n.kind {
            NodeKind::Feature(d) => check_feature(dag, n, d, &mut v),
            NodeKind::Model(m) => check_model(dag, n, m, &mut v),
        }
        if let Err(e) = n.prior.validate(n.n_categories()) {
            v("prior", format!("'{}': {e}", n.id));
        }
    }

    for cycle in cycles(dag) {
        v("cycle", cycle.join(","));
    }

    match dag.node(dag.output.as_str()) {
        None => v("output", format!("output node '{}' does not exist", dag.output)),
        Some(n) if !n.is_model() => v("output", format!("output node '{}' is not a model node", dag.output)),
        Some(_) => {}
    }

    if out.is_empty() {
        ValidationResult::Ok
    } else {
        ValidationResult::Violations(out)
    }
}

fn check_feature(dag: &Dag, n: &Node, d: &DistSpec, v: &mut impl FnMut(&'static str, String)) {
    if let Err(e) = d.validate() {
        v("dist", format!("'{}': {e}", n.id));
        return;
    }
    if !n.classes.is_empty() && Some(n.classes.len()) != d.n_categories() {
        v("classes", format!("'{}' lists {} classes for a distribution with {:?} categories", n.id, n.classes.len(), d.n_categories()));
    }
    match d {
        DistSpec::ConditionalCategorical { table, .. } => {
            if n.parents.is_empty() {
                v("feature parents", format!("conditional feature '{}' has no parents", n.id));
            }
            let mut rows = 1usize;
            for p in &n.parents {
                match dag.node(p.as_str()) {
                    Some(pn) if !pn.is_model() && pn.dist().is_some_and(DistSpec::is_discrete) => {
                        rows = rows.saturating_mul(pn.n_categories().unwrap_or(0));
                    }
                    Some(_) => v("feature parents", format!("'{}': parent '{}' must be a categorical feature", n.id, p)),
                    None => {}
                }
            }
            if rows != table.len() && n.parents.iter().all(|p| dag.node(p.as_str()).is_some()) {
                v("feature parents", format!("'{}': table has {} rows, parent configurations number {rows}", n.id, table.len()));
            }
        }
        _ => {
            if !n.parents.is_empty() {
                v("feature parents", format!("unconditional feature '{}' must have no parents", n.id));
            }
        }
    }
}

fn check_model(dag: &Dag, n: &Node, m: &ModelRef, v: &mut impl FnMut(&'static str, String)) {
    if n.parents.is_empty() {
        v("model parents", format!("model '{}' has no parents", n.id));
    }
    if n.classes.len() < 2 {
        v("classes", format!("model '{}' needs at least 2 classes", n.id));
    }
    if let Err(e) = m.architecture.validate() {
        v("architecture", format!("'{}': {e}", n.id));
    }
    if !m.encodings.is_empty() && m.encodings.len() != n.parents.len() {
        v("encoding", format!("'{}' has {} encodings for {} parents", n.id, m.encodings.len(), n.parents.len()));
    }
    for (j, p) in n.parents.iter().enumerate() {
        let Some(parent) = dag.node(p.as_str()) else { continue };
        let enc = m.encodings.get(j).copied().unwrap_or_else(|| Encoding::default_for(parent));
        if let Err(msg) = enc.check_parent(parent) {
            v("encoding", format!("'{}' input '{}': {msg}", n.id, p));
        }
    }
    if let (Some(trained), true) = (&m.trained, n.parents.iter().all(|p| dag.node(p.as_str()).is_some())) {
        if let Ok(spec) = dag.model_spec(n.id.as_str()) {
            if let Err(e) = trained.spec.check_compatible(&spec) {
                v("model", format!("'{}': {e}", n.id));
            }
        }
    }
}

/// Strongly connected components that contain a cycle, each as a sorted
/// list of node names.
fn cycles(dag: &Dag) -> Vec<Vec<String>> {
    // Tarjan over parent -> child edges.
    let n = dag.nodes.len();
    let mut children = vec![Vec::new(); n];
    let mut self_loop = vec![false; n];
    for (i, node) in dag.nodes.iter().enumerate() {
        for p in &node.parents {
            if let Some(j) = dag.index_of(p.as_str()) {
                children[j].push(i);
                if j == i {
                    self_loop[i] = true;
                }
            }
        }
    }
    struct State {
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        comps: Vec<Vec<usize>>,
    }
    fn strong(v: usize, children: &[Vec<usize>], s: &mut State) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for &w in &children[v] {
            match s.index[w] {
                None => {
                    strong(w, children, s);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.comps.push(comp);
        }
    }
    let mut s = State { index: vec![None; n], low: vec![0; n], on_stack: vec![false; n], stack: Vec::new(), next: 0, comps: Vec::new() };
    for v in 0..n {
        if s.index[v].is_none() {
            strong(v, &children, &mut s);
        }
    }
    let mut out: Vec<Vec<String>> = s
        .comps
        .into_iter()
        .filter(|c| c.len() > 1 || self_loop[c[0]])
        .map(|c| {
            let mut names: Vec<String> = c.into_iter().map(|i| dag.nodes[i].id.to_string()).collect();
            names.sort();
            names.dedup();
            names
        })
        .collect();
    out.sort();
    out
}

/// Parents before children, ties broken by node name.
pub fn topological_order(dag: &Dag) -> Result<Vec<NodeId>, GraphError> {
    Ok(topological_indices(dag)?.into_iter().map(|i| dag.nodes[i].id.clone()).collect())
}

pub(crate) fn topological_indices(dag: &Dag) -> Result<Vec<usize>, GraphError> {
    if let ValidationResult::Violations(v) = validate(dag) {
        return Err(GraphError::Invalid(v));
    }
    Ok(kahn(dag))
}

/// Like [`topological_indices`] but also accepts a feature node as output,
/// which inference and sampling handle as well as a model output.
pub(crate) fn evaluation_order(dag: &Dag) -> Result<Vec<usize>, GraphError> {
    let feature_output = dag.node(dag.output.as_str()).is_some_and(|n| !n.is_model());
    let v: Vec<Violation> = validate(dag).violations().iter().filter(|v| !(feature_output && v.rule == "output")).cloned().collect();
    if !v.is_empty() {
        return Err(GraphError::Invalid(v));
    }
    Ok(kahn(dag))
}

fn kahn(dag: &Dag) -> Vec<usize> {
    let n = dag.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (i, node) in dag.nodes.iter().enumerate() {
        for p in &node.parents {
            let j = dag.index_of(p.as_str()).expect("validated");
            children[j].push(i);
            indegree[i] += 1;
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = (0..n).filter(|&i| indegree[i] == 0).map(|i| (dag.nodes[i].id.as_str(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert((dag.nodes[c].id.as_str(), c));
            }
        }
    }
    order
}

/// The parent list of `id` in positional input order.
pub fn parents<'a>(dag: &'a Dag, id: &str) -> Result<&'a [NodeId], GraphError> {
    Ok(&dag.try_node(id)?.parents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::toy_network_untrained;

    fn cat(p: &[f64]) -> DistSpec {
        DistSpec::categorical(p.to_vec())
    }

    fn linear(id: &str, parents: &[&str]) -> Node {
        Node::model(id, parents, &["0", "1"], ModelRef::new(Architecture::LinearSoftmax))
    }

    #[test]
    fn two_cycle_is_reported() {
        let dag = Dag::new(vec![linear("a", &["b"]), linear("b", &["a"])], "a");
        let res = validate(&dag);
        assert!(res.violations().iter().any(|v| v.to_string() == "cycle: a,b"), "{res:?}");
        assert!(topological_order(&dag).is_err());
    }

    #[test]
    fn unresolved_parent_is_reported() {
        let dag = Dag::new(vec![Node::feature("x", cat(&[0.5, 0.5])), linear("m", &["x", "ghost"])], "m");
        let res = validate(&dag);
        assert!(res.violations().iter().any(|v| v.rule == "unresolved parent" && v.detail.contains("ghost")));
    }

    #[test]
    fn output_must_be_model() {
        let dag = Dag::new(vec![Node::feature("x", cat(&[0.5, 0.5]))], "x");
        assert!(validate(&dag).violations().iter().any(|v| v.rule == "output"));
        let dag = Dag::new(vec![Node::feature("x", cat(&[0.5, 0.5]))], "nope");
        assert!(validate(&dag).violations().iter().any(|v| v.rule == "output"));
    }

    #[test]
    fn feature_parent_rules() {
        let bad = Node::feature("x2", cat(&[0.5, 0.5])).with_parents(&["x1"]);
        let dag = Dag::new(vec![Node::feature("x1", cat(&[0.5, 0.5])), bad, linear("m", &["x2"])], "m");
        assert!(validate(&dag).violations().iter().any(|v| v.rule == "feature parents"));

        let table = DistSpec::ConditionalCategorical { table: vec![vec![0.9, 0.1], vec![0.2, 0.8]], labels: vec![] };
        let ok = Node::feature("x2", table.clone()).with_parents(&["x1"]);
        let dag = Dag::new(vec![Node::feature("x1", cat(&[0.5, 0.5])), ok, linear("m", &["x2"])], "m");
        assert!(validate(&dag).is_ok(), "{:?}", validate(&dag));

        let gamma = Node::feature("g", DistSpec::Gamma { shape: 2.0, rate: 1.0 });
        let cond = Node::feature("x2", table).with_parents(&["g"]);
        let dag = Dag::new(vec![gamma, cond, linear("m", &["x2"])], "m");
        assert!(validate(&dag).violations().iter().any(|v| v.rule == "feature parents"));
    }

    #[test]
    fn model_without_parents() {
        let dag = Dag::new(vec![linear("m", &[])], "m");
        assert!(validate(&dag).violations().iter().any(|v| v.rule == "model parents"));
    }

    #[test]
    fn toy_network_validates_and_orders() {
        let dag = toy_network_untrained();
        assert!(validate(&dag).is_ok(), "{:?}", validate(&dag));
        let order = topological_order(&dag).unwrap();
        let pos = |s: &str| order.iter().position(|n| n.as_str() == s).unwrap();
        for x in ["x1", "x2", "x3"] {
            for m in ["m1", "m2"] {
                assert!(pos(x) < pos(m));
            }
        }
        assert!(pos("m1") < pos("y") && pos("m2") < pos("y"));
        assert_eq!(parents(&dag, "y").unwrap(), &[NodeId::from("m1"), NodeId::from("m2")]);
        assert!(parents(&dag, "x1").unwrap().is_empty());
        assert!(parents(&dag, "zz").is_err());
    }

    #[test]
    fn trivial_orders() {
        let dag = Dag::new(vec![linear("m", &["x"]), Node::feature("x", cat(&[1.0]))], "m");
        assert_eq!(topological_order(&dag).unwrap(), vec![NodeId::from("x"), NodeId::from("m")]);
        let dag = Dag::new(vec![linear("y", &["m"]), linear("m", &["x"]), Node::feature("x", cat(&[0.5, 0.5]))], "y");
        let names: Vec<String> = topological_order(&dag).unwrap().iter().map(|n| n.to_string()).collect();
        assert_eq!(names, ["x", "m", "y"]);
    }

    #[test]
    fn json_round_trip_preserves_order() {
        let dag = toy_network_untrained();
        let text = dag.to_json_pretty();
        let back: Dag = serde_json::from_str(&text).unwrap();
        assert_eq!(validate(&back), validate(&dag));
        assert_eq!(topological_order(&back).unwrap(), topological_order(&dag).unwrap());
        assert_eq!(back, dag);
    }
}
