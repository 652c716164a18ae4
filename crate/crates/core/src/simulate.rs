//! Ancestral sampling and replicated simulation of the output distribution.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::dist::{draw_index, Histogram, Value};
use crate::graph::Dag;
use crate::plan::{EvalError, Plan};
use crate::rng;

pub const DEFAULT_BINS: usize = 20;

/// Uniform bins on [0, 1]: `[k/b, (k+1)/b)` with the last bin closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram, EvalError> {
    let mut counts = vec![0u64; bins.max(1)];
    let edges = bin_edges(bins)?;
    for &v in values {
        counts[bin_index(v, &edges)?] += 1;
    }
    Ok(Histogram::from_counts(edges, counts).expect("edges built for these counts"))
}

pub fn bin_edges(bins: usize) -> Result<Vec<f64>, EvalError> {
    if bins == 0 {
        return Err(EvalError::Config("bins must be >= 1".into()));
    }
    Ok((0..=bins).map(|k| k as f64 / bins as f64).collect())
}

fn bin_index(v: f64, edges: &[f64]) -> Result<usize, EvalError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(EvalError::OutOfRange(v));
    }
    let bins = edges.len() - 1;
    let mut k = ((v * bins as f64) as usize).min(bins - 1);
    // The product can round across an edge; settle against the stored edges.
    while k > 0 && v < edges[k] {
        k -= 1;
    }
    while k + 1 < bins && v >= edges[k + 1] {
        k += 1;
    }
    Ok(k)
}

/// Histogram as `bin_lo,bin_hi,count,frequency` CSV.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,frequency\n");
    for k in 0..h.n_bins() {
        out.push_str(&format!("{:?},{:?},{},{:?}\n", h.bin_edges[k], h.bin_edges[k + 1], h.counts[k], h.frequencies[k]));
    }
    out
}

/// Per-row scratch state for forward evaluation.
pub(crate) struct Scratch {
    pub values: Vec<Value>,
    pub simplex: Vec<Vec<f64>>,
    pub buf: Vec<f64>,
}

impl Scratch {
    pub fn new(n: usize) -> Self {
        Scratch { values: vec![Value::Discrete(0); n], simplex: vec![Vec::new(); n], buf: Vec::new() }
    }
}

/// Draws one joint assignment in topological order.
pub(crate) fn sample_row<R: Rng + ?Sized>(plan: &Plan, rng: &mut R, s: &mut Scratch) -> Result<(), EvalError> {
    for &i in &plan.order {
        if plan.is_model(i) {
            let p = plan.model_proba(i, &s.values, &s.simplex, &mut s.buf)?;
            s.values[i] = Value::Discrete(draw_index(rng, &p));
            s.simplex[i] = p;
        } else {
            let row = plan.table_row(i, &s.values)?;
            s.values[i] =
                plan.dist(i).expect("feature").sample_one(rng, row).map_err(|source| EvalError::Dist { node: plan.node(i).id.to_string(), source })?;
        }
    }
    Ok(())
}

/// `n` joint draws from the network; deterministic in `seed`.
pub fn ancestral_sample(dag: &Dag, n: usize, seed: u64) -> Result<SampleBatch, EvalError> {
    let plan = Plan::new(dag)?;
    let mut stream = rng::stream(seed);
    let mut s = Scratch::new(plan.len());
    let mut values: Vec<Vec<Value>> = vec![Vec::with_capacity(n); plan.len()];
    let mut simplexes: Vec<Vec<Vec<f64>>> = vec![Vec::new(); plan.len()];
    for _ in 0..n {
        sample_row(&plan, &mut stream, &mut s)?;
        for i in 0..plan.len() {
            values[i].push(s.values[i]);
            if plan.is_model(i) {
                simplexes[i].push(std::mem::take(&mut s.simplex[i]));
            }
        }
    }
    let mut columns = BTreeMap::new();
    let mut simplex_map = BTreeMap::new();
    for (i, (v, p)) in values.into_iter().zip(simplexes).enumerate() {
        let id = plan.node(i).id.clone();
        if plan.is_model(i) {
            simplex_map.insert(id.clone(), p);
        }
        columns.insert(id, v);
    }
    Ok(SampleBatch { n_rows: n, columns, simplexes: simplex_map })
}

/// The histogrammed statistic of an output simplex: the positive-class
/// (index 1) probability for binary outputs, the top probability otherwise.
pub fn output_statistic(p: &[f64]) -> f64 {
    if p.len() == 2 {
        p[1]
    } else {
        p.iter().copied().fold(0.0, f64::max)
    }
}

/// Order statistics of the simulated output statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Summary {
    /// Linear-interpolation quantiles; `values` is reordered.
    pub fn of(values: &mut [f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (values.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
        };
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Some(Summary { mean, min: values[0], q25: q(0.25), median: q(0.5), q75: q(0.75), max: values[values.len() - 1] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub reps: usize,
    pub samples_per_rep: usize,
    pub bins: usize,
    pub seed: u64,
    pub statistic: String,
    pub output_classes: Vec<String>,
    pub pooled: Histogram,
    pub pooled_class_frequencies: Vec<f64>,
    pub summary: Option<Summary>,
    pub rep_medians: Vec<f64>,
    pub per_rep: Vec<Histogram>,
    pub class_frequencies: Vec<Vec<f64>>,
}

struct RepOutput {
    stats: Vec<f64>,
    class_counts: Vec<u64>,
}

fn run_rep(plan: &Plan, n: usize, seed: u64) -> Result<RepOutput, EvalError> {
    let mut stream = rng::stream(seed);
    let mut s = Scratch::new(plan.len());
    let o = plan.output;
    let k = plan.cards[o].ok_or_else(|| EvalError::Continuous(plan.node(o).id.to_string()))?;
    let mut out = RepOutput { stats: Vec::with_capacity(n), class_counts: vec![0; k] };
    for _ in 0..n {
        sample_row(plan, &mut stream, &mut s)?;
        let stat = if plan.is_model(o) {
            output_statistic(&s.simplex[o])
        } else {
            let row = plan.table_row(o, &s.values)?;
            let p = plan.dist(o).expect("feature").probs(row).map_err(|source| EvalError::Dist { node: plan.node(o).id.to_string(), source })?;
            output_statistic(p)
        };
        out.stats.push(stat);
        out.class_counts[s.values[plan.output].as_discrete().expect("class")] += 1;
    }
    Ok(out)
}

/// `reps` independent runs of `n` samples each. Rep `r` draws from
/// `rng::derive_seed(seed, r)`, so the result does not depend on how reps
/// are scheduled across threads.
pub fn run_simulation(dag: &Dag, reps: usize, n: usize, bins: usize, seed: u64) -> Result<SimulationResult, EvalError> {
    if reps == 0 {
        return Err(EvalError::Config("reps must be >= 1".into()));
    }
    let plan = Plan::new(dag)?;
    let edges = bin_edges(bins)?;
    let outputs: Vec<RepOutput> = (0..reps).into_par_iter().map(|r| run_rep(&plan, n, rng::derive_seed(seed, r as u64))).collect::<Result<_, _>>()?;

    let k = plan.cards[plan.output].ok_or_else(|| EvalError::Continuous(plan.node(plan.output).id.to_string()))?;
    let mut pooled = Histogram::from_counts(edges.clone(), vec![0; bins]).expect("matching bins");
    let mut pooled_counts = vec![0u64; k];
    let mut per_rep = Vec::with_capacity(reps);
    let mut class_frequencies = Vec::with_capacity(reps);
    let mut rep_medians = Vec::with_capacity(reps);
    let mut all = Vec::with_capacity(reps * n);
    for mut o in outputs {
        let h = histogram(&o.stats, bins)?;
        pooled.merge(&h).expect("matching bins");
        per_rep.push(h);
        for (a, b) in pooled_counts.iter_mut().zip(&o.class_counts) {
            *a += b;
        }
        class_frequencies.push(frequencies(&o.class_counts));
        all.extend_from_slice(&o.stats);
        rep_medians.push(Summary::of(&mut o.stats).map_or(f64::NAN, |s| s.median));
    }
    let statistic = if k == 2 { "positive_probability" } else { "max_probability" };
    Ok(SimulationResult {
        reps,
        samples_per_rep: n,
        bins,
        seed,
        statistic: statistic.into(),
        output_classes: plan.node(plan.output).class_labels(),
        pooled,
        pooled_class_frequencies: frequencies(&pooled_counts),
        summary: Summary::of(&mut all),
        rep_medians,
        per_rep,
        class_frequencies,
    })
}

fn frequencies(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
}
