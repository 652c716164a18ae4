//! Bayesian-network stress testing for hierarchies of classifiers.
//!
//! Features and model outputs are nodes of a [`graph::Dag`]. Feature nodes
//! carry a distribution; model nodes carry a trained classifier whose
//! probability vector is the node's conditional distribution given its
//! parents. Sampling that network under modified inputs or replaced models
//! shows how the top model's output distribution and accuracy move.

pub mod banksim;
pub mod batch;
pub mod dist;
pub mod fixtures;
pub mod graph;
pub mod inference;
pub mod models;
pub mod plan;
pub mod rng;
pub mod score;
pub mod simulate;
pub mod stress;
pub mod training;

pub use dist::{DistSpec, PriorSpec, Value};
pub use graph::{Dag, ModelRef, Node, NodeId};
pub use models::{Architecture, Encoding, TrainConfig, TrainedModel};
