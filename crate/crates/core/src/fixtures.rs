//! The bundled toy problem: three categorical features, two lower models and
//! a binary top model.
//!
//! [`toy_truth`] is the all-categorical network that generates labelled
//! data; [`toy_network_untrained`] is the classifier hierarchy trained on it.

use std::path::Path;

use serde_json::json;

use crate::batch::Table;
use crate::dist::DistSpec;
use crate::graph::{Dag, ModelRef, Node};
use crate::models::{self, Architecture, Encoding, TrainConfig, TrainedModel};
use crate::plan::EvalError;
use crate::simulate::ancestral_sample;
use crate::training::{train_network, InputBuilder, TrainError, TrainOptions};

pub const X1: [f64; 2] = [0.5, 0.5];
pub const X2: [f64; 3] = [0.2, 0.3, 0.5];
pub const X3: [f64; 3] = [0.4, 0.4, 0.2];

/// P(m1 | x1).
pub const M1_GIVEN_X1: [[f64; 3]; 2] = [[0.15, 0.35, 0.5], [0.6, 0.3, 0.1]];

/// P(m2 = pos | x1, x2, x3). Non-monotone in x3, so no linear boundary on
/// the raw category indices separates it.
pub const M2_POS: [[[f64; 3]; 3]; 2] =
    [[[0.52, 0.99, 0.90], [0.15, 0.95, 0.71], [0.03, 0.79, 0.29]], [[0.29, 0.97, 0.77], [0.06, 0.87, 0.48], [0.01, 0.59, 0.13]]];

/// P(y = pos | m1, m2); m2 carries nearly all the signal.
pub const Y_POS: [[f64; 2]; 3] = [[0.10, 0.97], [0.05, 0.95], [0.02, 0.90]];

pub const M1_CLASSES: [&str; 3] = ["low", "mid", "high"];
pub const BINARY_CLASSES: [&str; 2] = ["neg", "pos"];

fn cat(p: &[f64]) -> DistSpec {
    DistSpec::categorical(p.to_vec())
}

fn binary_rows(pos: impl IntoIterator<Item = f64>) -> Vec<Vec<f64>> {
    pos.into_iter().map(|p| vec![1.0 - p, p]).collect()
}

fn features() -> Vec<Node> {
    vec![Node::feature("x1", cat(&X1)), Node::feature("x2", cat(&X2)), Node::feature("x3", cat(&X3))]
}

/// Generative ground truth; every node is a feature so it can be sampled
/// without trained models.
pub fn toy_truth() -> Dag {
    let m1 = DistSpec::ConditionalCategorical { table: M1_GIVEN_X1.iter().map(|r| r.to_vec()).collect(), labels: labels(&M1_CLASSES) };
    let m2 = DistSpec::ConditionalCategorical { table: binary_rows(M2_POS.iter().flatten().flatten().copied()), labels: labels(&BINARY_CLASSES) };
    let y = DistSpec::ConditionalCategorical { table: binary_rows(Y_POS.iter().flat_map(|r| r.iter().copied())), labels: labels(&BINARY_CLASSES) };
    let mut nodes = features();
    nodes.push(Node::feature("m1", m1).with_parents(&["x1"]));
    nodes.push(Node::feature("m2", m2).with_parents(&["x1", "x2", "x3"]));
    nodes.push(Node::feature("y", y).with_parents(&["m1", "m2"]));
    Dag::new(nodes, "y")
}

fn labels(s: &[&str]) -> Vec<String> {
    s.iter().map(|&x| x.to_owned()).collect()
}

/// Training settings shared by the toy models: full batch, so the L1
/// thresholds produce exact zeros.
pub fn toy_train_config() -> TrainConfig {
    TrainConfig { epochs: 300, learning_rate: Some(0.5), batch_size: Some(0), l1_z: 4.0, seed: 0 }
}

/// The classifier hierarchy: linear models everywhere, `y` reading the
/// lower models' probability outputs.
pub fn toy_network_untrained() -> Dag {
    let linear = |enc: Encoding, n: usize| {
        let mut m = ModelRef::new(Architecture::LinearSoftmax).with_encodings(vec![enc; n]);
        m.train = Some(toy_train_config());
        m
    };
    let mut nodes = features();
    nodes.push(Node::model("m1", &["x1", "x2", "x3"], &M1_CLASSES, linear(Encoding::OneHot, 3)));
    nodes.push(Node::model("m2", &["x1", "x2", "x3"], &BINARY_CLASSES, linear(Encoding::Numeric, 3)));
    nodes.push(Node::model("y", &["m1", "m2"], &BINARY_CLASSES, linear(Encoding::Proba, 2)));
    Dag::new(nodes, "y")
}

/// `n` labelled rows drawn from [`toy_truth`], one column per node.
pub fn toy_data(n: usize, seed: u64) -> Result<Table, EvalError> {
    let truth = toy_truth();
    Ok(ancestral_sample(&truth, n, seed)?.to_table(&truth))
}

pub const TOY_TRAIN_ROWS: usize = 20_000;
pub const TOY_EVAL_ROWS: usize = 5_000;

/// Training and held-out tables from disjoint seeds.
pub fn toy_split(seed: u64) -> Result<(Table, Table), EvalError> {
    Ok((toy_data(TOY_TRAIN_ROWS, crate::rng::derive_named(seed, "train"))?, toy_data(TOY_EVAL_ROWS, crate::rng::derive_named(seed, "eval"))?))
}

/// The toy hierarchy trained on `train`.
pub fn toy_trained(train: &Table, seed: u64) -> Result<Dag, TrainError> {
    Ok(train_network(&toy_network_untrained(), train, &TrainOptions::new(seed))?.0)
}

/// Seed of the bundled toy tables and replacement models.
pub const TOY_SEED: u64 = 7;

pub fn toy_stumps() -> Architecture {
    Architecture::BoostedStumps { rounds: 50, learning_rate: 0.3 }
}

pub fn toy_mlp() -> Architecture {
    Architecture::Mlp { hidden: vec![16, 16] }
}

/// Node `node` of a trained toy network refitted with another architecture
/// on the same inputs and labels. Stumps keep their own learning rate.
pub fn toy_replacement(dag: &Dag, train: &Table, node: &str, arch: Architecture, seed: u64) -> Result<TrainedModel, TrainError> {
    let (x, y) = InputBuilder::new(dag, train, false).training_set(node)?;
    let mut spec = dag.model_spec(node)?;
    let config = match arch {
        Architecture::LinearSoftmax => toy_train_config(),
        Architecture::BoostedStumps { .. } => TrainConfig { learning_rate: None, ..toy_train_config() },
        Architecture::Mlp { .. } => TrainConfig::default(),
    };
    spec.architecture = arch;
    let config = config.with_seed(crate::rng::derive_named(seed, node));
    models::train(&spec, &x, &y, &config).map_err(|source| TrainError::Model { node: node.to_owned(), source })
}

/// Overrides used by the toy feature-shift scenarios.
pub fn toy_overrides() -> [(&'static str, DistSpec); 3] {
    [("x3", cat(&[0.1, 0.2, 0.7])), ("x1", cat(&[0.9, 0.1])), ("x2", cat(&[0.6, 0.3, 0.1]))]
}

/// A network whose nodes form a cycle.
pub fn cyclic_network() -> Dag {
    let linear = || ModelRef::new(Architecture::LinearSoftmax);
    let nodes = vec![
        Node::feature("x1", cat(&X1)),
        Node::model("a", &["x1", "b"], &BINARY_CLASSES, linear()),
        Node::model("b", &["a"], &BINARY_CLASSES, linear()),
        Node::model("y", &["a"], &BINARY_CLASSES, linear()),
    ];
    Dag::new(nodes, "y")
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialises") + "\n"
}

fn put(dir: &Path, rel: &str, body: &str) -> std::io::Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, body)
}

/// Writes the toy fixture set: network, tables, replacement models and
/// scenarios.
pub fn write_toy_fixtures(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let (train, eval) = toy_split(TOY_SEED)?;
    let net = toy_network_untrained();
    put(dir, "network.json", &(net.to_json_pretty() + "\n"))?;
    put(dir, "cyclic.json", &(cyclic_network().to_json_pretty() + "\n"))?;
    put(dir, "train.csv", &train.to_csv_string())?;
    put(dir, "eval.csv", &eval.to_csv_string())?;
    let keep: Vec<String> = train.headers().iter().filter(|h| *h != "m2").cloned().collect();
    let cols = keep.iter().map(|h| train.column(h).expect("present")[..1000].to_vec()).collect();
    put(dir, "missing_m2.csv", &Table::from_columns(keep, cols).to_csv_string())?;

    let trained = toy_trained(&train, TOY_SEED)?;
    put(dir, "models/m2_stumps.json", &pretty(&toy_replacement(&trained, &train, "m2", toy_stumps(), TOY_SEED)?))?;
    put(dir, "models/m1_mlp.json", &pretty(&toy_replacement(&trained, &train, "m1", toy_mlp(), TOY_SEED)?))?;

    let [x3, x1, x2] = toy_overrides();
    let one = |(id, d): &(&str, DistSpec)| json!({ "overrides": { *id: d } });
    let scenarios = [
        ("exp1_x3.json", one(&x3)),
        ("exp2_x1.json", one(&x1)),
        ("exp3_x2.json", one(&x2)),
        ("exp4_all.json", json!({ "overrides": { x3.0: x3.1, x1.0: x1.1, x2.0: x2.1 } })),
        ("null_x3.json", json!({ "overrides": { "x3": cat(&X3) } })),
        ("exp5_swap_m1.json", json!({ "swaps": { "m1": "../models/m1_mlp.json" } })),
        ("exp6_swap_m2.json", json!({ "swaps": { "m2": "../models/m2_stumps.json" } })),
        ("exp7_ablate_m2.json", json!({ "ablate": ["m2"] })),
        ("ablate_both.json", json!({ "ablate": ["m1", "m2"] })),
        ("empty.json", json!({})),
        ("bad_kind.json", json!({ "overrides": { "m1": cat(&[0.2, 0.3, 0.5]) } })),
    ];
    for (name, doc) in scenarios {
        put(dir, &format!("scenarios/{name}"), &pretty(&doc))?;
    }
    Ok(())
}

/// Writes the BankSim fixture set: network, training config and ablation
/// scenarios. Transactions come from [`crate::banksim::synthetic`].
pub fn write_banksim_fixtures(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    put(dir, "network.json", &(crate::banksim::network().to_json_pretty() + "\n"))?;
    put(dir, "train_config.json", &pretty(&json!({ "banksim": crate::banksim::PipelineConfig::default() })))?;
    for (name, doc) in [
        ("ablate_m1.json", json!({ "ablate": ["m1"], "reps": 100, "samples": 5000 })),
        ("ablate_m2.json", json!({ "ablate": ["m2"], "reps": 100, "samples": 5000 })),
        ("ablate_both.json", json!({ "ablate": ["m1", "m2"], "reps": 100, "samples": 5000 })),
    ] {
        put(dir, &format!("scenarios/{name}"), &pretty(&doc))?;
    }
    Ok(())
}

/// A random valid all-discrete network of 2 to `max_nodes` nodes with 2 to
/// `max_categories` categories each. Feature nodes may condition on earlier
/// features; model nodes are linear softmax models with random weights;
/// the last node is a model and the output.
pub fn random_discrete_network(seed: u64, max_nodes: usize, max_categories: usize) -> Dag {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed);
    let n = rng.random_range(2..=max_nodes.max(2));
    let mut nodes: Vec<Node> = Vec::with_capacity(n);
    let simplex = |rng: &mut crate::rng::Stream, k: usize| {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    for i in 0..n {
        let id = format!("v{i}");
        let k = rng.random_range(2..=max_categories.max(2));
        let mut parents: Vec<usize> = (0..i).filter(|_| rng.random_bool(0.4)).collect();
        parents.truncate(2);
        let last = i + 1 == n;
        if last && parents.is_empty() {
            parents.push(i - 1);
        }
        let as_model = !parents.is_empty() && (last || rng.random_bool(0.4));
        let classes: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let node = if as_model {
            let encodings = parents
                .iter()
                .map(|&p| match rng.random_range(0..3) {
                    0 => Encoding::Numeric,
                    1 => Encoding::OneHot,
                    _ if nodes[p].is_model() => Encoding::Proba,
                    _ => Encoding::OneHot,
                })
                .collect();
            let names: Vec<&str> = parents.iter().map(|&p| nodes[p].id.as_str()).collect();
            let refs: Vec<&str> = classes.iter().map(String::as_str).collect();
            Node::model(&id, &names, &refs, ModelRef::new(Architecture::LinearSoftmax).with_encodings(encodings))
        } else {
            let feature_parents: Vec<usize> = parents.into_iter().filter(|&p| !nodes[p].is_model()).collect();
            if feature_parents.is_empty() {
                Node::feature(&id, cat(&simplex(&mut rng, k)))
            } else {
                let rows: usize = feature_parents.iter().map(|&p| nodes[p].n_categories().expect("discrete")).product();
                let table = (0..rows).map(|_| simplex(&mut rng, k)).collect();
                let names: Vec<&str> = feature_parents.iter().map(|&p| nodes[p].id.as_str()).collect();
                Node::feature(&id, DistSpec::ConditionalCategorical { table, labels: Vec::new() }).with_parents(&names)
            }
        };
        nodes.push(node);
    }
    let output = nodes[n - 1].id.clone();
    let mut dag = Dag::new(nodes, output);
    let models: Vec<String> = dag.nodes().iter().filter(|n| n.is_model()).map(|n| n.id.to_string()).collect();
    for id in models {
        let spec = dag.model_spec(&id).expect("model node");
        let params = (0..models::linear::n_params(spec.input_width(), spec.n_classes)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = TrainedModel::from_parameters(spec, params).expect("layout matches");
        let mut node = dag.node(&id).expect("present").clone();
        let crate::graph::NodeKind::Model(m) = &node.kind else { unreachable!() };
        node.kind = crate::graph::NodeKind::Model(m.clone().with_trained(std::sync::Arc::new(model)));
        dag = dag.with_node(node).expect("same wiring");
    }
    dag
}
