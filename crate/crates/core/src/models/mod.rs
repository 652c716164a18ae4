//! Probabilistic classifiers used as model nodes.
//!
//! Every model maps an encoded input row to a probability vector over its
//! classes. Inputs are standardised with training-set statistics before the
//! architecture sees them (stumps excepted, which are scale-free).
//!
//! Training minimises mean cross-entropy. Linear weights and stump leaves
//! additionally carry a significance-scaled L1 penalty (`l1_z`): a weight
//! stays exactly zero unless its gradient at zero exceeds `l1_z` standard
//! errors of the gradient under label noise. A model retrained on permuted
//! labels therefore collapses to the class prior instead of ranking rows by
//! fitted noise.

pub mod linear;
pub mod mlp;
pub mod stumps;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Value;
use crate::graph::{Node, NodeId};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no training rows")]
    EmptyData,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("input arity mismatch: expected {expected} columns, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("{rows} input rows but {labels} labels")]
    RowMismatch { rows: usize, labels: usize },
    #[error("training diverged (non-finite loss at epoch {0})")]
    Diverged(usize),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ParameterLayout { expected: usize, got: usize },
    #[error("bad parameter encoding: {0}")]
    BadParameter(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    LinearSoftmax,
    /// Feed-forward network with ReLU hidden layers.
    Mlp {
        hidden: Vec<usize>,
    },
    /// Gradient-boosted depth-1 trees, logistic loss; one-vs-rest above two
    /// classes.
    BoostedStumps {
        rounds: usize,
        learning_rate: f64,
    },
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Architecture::LinearSoftmax => Ok(()),
            Architecture::Mlp { hidden } if hidden.is_empty() || hidden.contains(&0) => {
                Err(ModelError::InvalidArchitecture("mlp hidden sizes must be non-empty and positive".into()))
            }
            Architecture::Mlp { .. } => Ok(()),
            Architecture::BoostedStumps { rounds, learning_rate } => {
                if *rounds == 0 || !(learning_rate.is_finite() && *learning_rate > 0.0) {
                    Err(ModelError::InvalidArchitecture("stumps need rounds > 0 and learning_rate > 0".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn default_learning_rate(&self) -> f64 {
        match self {
            Architecture::LinearSoftmax => 0.1,
            Architecture::Mlp { .. } => 0.01,
            Architecture::BoostedStumps { learning_rate, .. } => *learning_rate,
        }
    }
}

/// How a parent's value becomes model input columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// One column: the real value, or the category index as a number.
    Numeric,
    /// One column per category of the parent's (sampled) value.
    OneHot,
    /// One column per class holding a model parent's output probabilities.
    /// On a discrete feature parent it is identical to `OneHot`.
    Proba,
}

impl Encoding {
    pub fn default_for(parent: &Node) -> Self {
        match parent.n_categories() {
            Some(_) => Encoding::OneHot,
            None => Encoding::Numeric,
        }
    }

    pub fn check_parent(self, parent: &Node) -> Result<(), String> {
        match (self, parent.n_categories()) {
            (Encoding::Numeric, _) => Ok(()),
            (Encoding::OneHot | Encoding::Proba, Some(k)) if k > 0 => Ok(()),
            (enc, _) => Err(format!("{enc:?} encoding needs a discrete parent")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputColumn {
    pub parent: NodeId,
    pub encoding: Encoding,
    pub width: usize,
}

impl InputColumn {
    pub fn new(parent: NodeId, encoding: Encoding, n_categories: Option<usize>) -> Self {
        let width = match encoding {
            Encoding::Numeric => 1,
            Encoding::OneHot | Encoding::Proba => n_categories.unwrap_or(1),
        };
        InputColumn { parent, encoding, width }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub n_classes: usize,
    pub inputs: Vec<InputColumn>,
}

impl ModelSpec {
    pub fn input_width(&self) -> usize {
        self.inputs.iter().map(|c| c.width).sum()
    }

    /// Same classes and the same positional input schema.
    pub fn check_compatible(&self, wanted: &ModelSpec) -> Result<(), ModelError> {
        if self.n_classes != wanted.n_classes {
            return Err(ModelError::SchemaMismatch(format!("{} classes, node has {}", self.n_classes, wanted.n_classes)));
        }
        if self.inputs != wanted.inputs {
            let show = |s: &ModelSpec| s.inputs.iter().map(|c| format!("{}:{:?}/{}", c.parent, c.encoding, c.width)).collect::<Vec<_>>().join(",");
            return Err(ModelError::SchemaMismatch(format!("inputs [{}], node expects [{}]", show(self), show(wanted))));
        }
        Ok(())
    }
}

/// Training hyperparameters; every field has a documented default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to 0.1 (linear), 0.01 (MLP) or the stumps' own rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// `None`: full batch below 10 000 rows, else 256. `Some(0)`: full batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Significance threshold of the L1 penalty in gradient standard
    /// errors; 0 disables it.
    pub l1_z: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, learning_rate: None, batch_size: None, l1_z: 4.0, seed: 0 }
    }
}

pub const FULL_BATCH_LIMIT: usize = 10_000;
const DEFAULT_MINIBATCH: usize = 256;

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn batch_for(&self, n: usize) -> usize {
        match self.batch_size {
            Some(0) => n,
            Some(b) => b.min(n),
            None if n < FULL_BATCH_LIMIT => n,
            None => DEFAULT_MINIBATCH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
    pub n_rows: usize,
    pub config: TrainConfig,
}

/// Per-column affine standardisation applied before the architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    #[serde(with = "exact_f64")]
    pub shift: Vec<f64>,
    #[serde(with = "exact_f64")]
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(width: usize) -> Self {
        Scaler { shift: vec![0.0; width], scale: vec![1.0; width] }
    }

    pub fn fit(x: &Matrix) -> Self {
        let mut shift = vec![0.0; x.cols];
        let mut scale = vec![0.0; x.cols];
        for r in 0..x.rows {
            for (s, v) in shift.iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        let n = x.rows.max(1) as f64;
        shift.iter_mut().for_each(|s| *s /= n);
        for r in 0..x.rows {
            for ((q, v), m) in scale.iter_mut().zip(x.row(r)).zip(&shift) {
                *q += (v - m).powi(2);
            }
        }
        for q in scale.iter_mut() {
            let sd = (*q / n).sqrt();
            *q = if sd > 1e-12 { sd } else { 1.0 };
        }
        Scaler { shift, scale }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.shift).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let (src, dst) = (x.row(r), &mut out.data[r * x.cols..(r + 1) * x.cols]);
            self.apply(src, dst);
        }
        out
    }
}

/// Dense row-major matrix of encoded model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    #[serde(with = "exact_f64")]
    pub parameters: Vec<f64>,
    pub scaler: Scaler,
    pub training_meta: TrainingMeta,
}

/// Serialises `f64` vectors as shortest round-trip decimal strings so a
/// bundle reloads bit-for-bit.
pub mod exact_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter().map(|t| t.parse::<f64>().map_err(|e| serde::de::Error::custom(format!("{t:?}: {e}")))).collect()
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut c = vec![0; n_classes];
    for &l in labels {
        c[l] += 1;
    }
    c
}

/// Smoothed log class frequencies, the starting bias of every architecture.
pub(crate) fn log_prior(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let n = labels.len() as f64;
    class_counts(labels, n_classes).into_iter().map(|c| ((c as f64 + 0.5) / (n + 0.5 * n_classes as f64)).ln()).collect()
}

/// Per-class L1 thresholds `z * sqrt(pi_k (1 - pi_k) / n)`.
pub(crate) fn l1_thresholds(labels: &[usize], n_classes: usize, z: f64) -> Vec<f64> {
    let n = labels.len() as f64;
    class_counts(labels, n_classes)
        .into_iter()
        .map(|c| {
            let pi = c as f64 / n;
            z * (pi * (1.0 - pi) / n).sqrt()
        })
        .collect()
}

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Mean cross-entropy of predicted simplexes against labels.
pub fn cross_entropy(model: &TrainedModel, x: &Matrix, labels: &[usize]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let p = model.predict_proba(x.row(r))?;
        total -= p[l].max(1e-300).ln();
    }
    Ok(total / labels.len().max(1) as f64)
}

fn check_training_data(spec: &ModelSpec, x: &Matrix, labels: &[usize]) -> Result<(), ModelError> {
    spec.architecture.validate()?;
    if spec.n_classes < 2 {
        return Err(ModelError::InvalidArchitecture("need at least 2 classes".into()));
    }
    if x.rows == 0 || labels.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.rows != labels.len() {
        return Err(ModelError::RowMismatch { rows: x.rows, labels: labels.len() });
    }
    if x.cols != spec.input_width() {
        return Err(ModelError::ArityMismatch { expected: spec.input_width(), got: x.cols });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= spec.n_classes) {
        return Err(ModelError::LabelOutOfRange { label, n_classes: spec.n_classes });
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training inputs"));
    }
    Ok(())
}

/// Fits `spec` to `(x, labels)`. Deterministic given `config.seed`.
pub fn train(spec: &ModelSpec, x: &Matrix, labels: &[usize], config: &TrainConfig) -> Result<TrainedModel, ModelError> {
    check_training_data(spec, x, labels)?;
    let lr = config.learning_rate.unwrap_or_else(|| spec.architecture.default_learning_rate());
    let (parameters, scaler) = match &spec.architecture {
        Architecture::LinearSoftmax => {
            let scaler = Scaler::fit(x);
            let xs = scaler.transform(x);
            (linear::fit(&xs, labels, spec.n_classes, config, lr)?, scaler)
        }
        Architecture::Mlp { hidden } => {
            let scaler = Scaler::fit(x);
            let xs = scaler.transform(x);
            (mlp::fit(&xs, labels, spec.n_classes, hidden, config, lr)?, scaler)
        }
        Architecture::BoostedStumps { rounds, .. } => (stumps::fit(x, labels, spec.n_classes, *rounds, lr, config.l1_z)?, Scaler::identity(x.cols)),
    };
    let mut model = TrainedModel {
        spec: spec.clone(),
        parameters,
        scaler,
        training_meta: TrainingMeta { epochs: config.epochs, final_loss: 0.0, seed: config.seed, n_rows: x.rows, config: config.clone() },
    };
    let loss = cross_entropy(&model, x, labels)?;
    if !loss.is_finite() {
        return Err(ModelError::Diverged(config.epochs));
    }
    model.training_meta.final_loss = loss;
    Ok(model)
}

/// Retrains `model`'s architecture and config on a seeded uniform
/// permutation of `labels`, which preserves the class histogram.
pub fn retrain_random_labels(model: &TrainedModel, x: &Matrix, labels: &[usize], seed: u64) -> Result<TrainedModel, ModelError> {
    let permuted = permute_labels(labels, seed);
    train(&model.spec, x, &permuted, &model.training_meta.config)
}

pub fn permute_labels(labels: &[usize], seed: u64) -> Vec<usize> {
    let mut out = labels.to_vec();
    out.shuffle(&mut rng::stream(seed));
    out
}

impl TrainedModel {
    /// A model from explicit parameters with no input standardisation.
    pub fn from_parameters(spec: ModelSpec, parameters: Vec<f64>) -> Result<Self, ModelError> {
        let expected = match &spec.architecture {
            Architecture::LinearSoftmax => linear::n_params(spec.input_width(), spec.n_classes),
            Architecture::Mlp { hidden } => mlp::n_params(&mlp::layer_sizes(spec.input_width(), hidden, spec.n_classes)),
            Architecture::BoostedStumps { rounds, .. } => stumps::n_params(spec.n_classes, *rounds),
        };
        if parameters.len() != expected {
            return Err(ModelError::ParameterLayout { expected, got: parameters.len() });
        }
        let width = spec.input_width();
        Ok(TrainedModel {
            spec,
            parameters,
            scaler: Scaler::identity(width),
            training_meta: TrainingMeta { epochs: 0, final_loss: f64::NAN, seed: 0, n_rows: 0, config: TrainConfig::default() },
        })
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    /// Class probabilities for one encoded input row.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let width = self.spec.input_width();
        if x.len() != width {
            return Err(ModelError::ArityMismatch { expected: width, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("model input"));
        }
        let mut p = match &self.spec.architecture {
            Architecture::LinearSoftmax => {
                let mut xs = vec![0.0; width];
                self.scaler.apply(x, &mut xs);
                linear::forward(&self.parameters, &xs, self.spec.n_classes)
            }
            Architecture::Mlp { hidden } => {
                let mut xs = vec![0.0; width];
                self.scaler.apply(x, &mut xs);
                mlp::forward(&self.parameters, &mlp::layer_sizes(width, hidden, self.spec.n_classes), &xs)
            }
            Architecture::BoostedStumps { rounds, .. } => stumps::forward(&self.parameters, x, self.spec.n_classes, *rounds),
        };
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        Ok(p)
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize, ModelError> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64, ModelError> {
        let mut hit = 0usize;
        for (r, &l) in labels.iter().enumerate() {
            hit += usize::from(self.predict_class(x.row(r))? == l);
        }
        Ok(hit as f64 / labels.len().max(1) as f64)
    }
}

/// Appends the encoded columns of one row to `out`. `simplexes[j]` is the
/// output of parent `j` when it is a model; `Proba` falls back to one-hot
/// for feature parents.
pub fn encode_row(inputs: &[InputColumn], values: &[Value], simplexes: &[Option<&[f64]>], out: &mut Vec<f64>) -> Result<(), String> {
    for (j, col) in inputs.iter().enumerate() {
        let v = values[j];
        match (col.encoding, simplexes[j]) {
            (Encoding::Numeric, _) => out.push(v.as_f64()),
            (Encoding::Proba, Some(p)) => {
                if p.len() != col.width {
                    return Err(format!("parent '{}' gives {} probabilities, schema expects {}", col.parent, p.len(), col.width));
                }
                out.extend_from_slice(p);
            }
            (Encoding::OneHot | Encoding::Proba, _) => {
                let k = v.as_discrete().ok_or_else(|| format!("parent '{}' has a real value; one-hot needs a category", col.parent))?;
                if k >= col.width {
                    return Err(format!("parent '{}' category {k} outside one-hot width {}", col.parent, col.width));
                }
                out.extend((0..col.width).map(|c| f64::from(u8::from(c == k))));
            }
        }
    }
    Ok(())
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}
