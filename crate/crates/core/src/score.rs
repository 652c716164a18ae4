//! Model outputs on observed feature rows.
//!
//! With every feature observed, a model's output is a deterministic function
//! of the features except where a child reads a lower model's sampled class.
//! Those classes are summed out exactly, so each row gets
//! `P(model = k | features)` for every model node.

use std::collections::{BTreeMap, BTreeSet};

use crate::batch::Table;
use crate::dist::Value;
use crate::graph::{Dag, NodeId};
use crate::models::argmax;
use crate::plan::{EvalError, Plan};
use crate::simulate::Scratch;

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    /// Table rows that had every needed feature.
    pub rows: Vec<usize>,
    /// Per model node, one marginal simplex per scored row.
    pub marginals: BTreeMap<NodeId, Vec<Vec<f64>>>,
}

impl Scores {
    pub fn of(&self, id: &str) -> Option<&[Vec<f64>]> {
        self.marginals.get(id).map(Vec::as_slice)
    }
}

/// Feature nodes that feed some model, directly or through other features.
fn needed_features(plan: &Plan) -> BTreeSet<usize> {
    let mut need = BTreeSet::new();
    let mut stack: Vec<usize> = (0..plan.len()).filter(|&i| plan.is_model(i)).collect();
    while let Some(i) = stack.pop() {
        for &p in &plan.parents[i] {
            if !plan.is_model(p) && need.insert(p) {
                stack.push(p);
            }
        }
    }
    need
}

pub fn score_table(dag: &Dag, table: &Table) -> Result<Scores, EvalError> {
    let plan = Plan::new(dag)?;
    let need = needed_features(&plan);
    let mut columns: BTreeMap<usize, Vec<Option<Value>>> = BTreeMap::new();
    for &i in &need {
        let node = plan.node(i);
        let col = table.node_values(node).map_err(|e| EvalError::Encoding { node: node.id.to_string(), detail: e.to_string() })?;
        columns.insert(i, col);
    }
    let matters: Vec<bool> = (0..plan.len()).map(|i| plan.is_model(i) && plan.class_matters(i)).collect();
    let models: Vec<usize> = (0..plan.len()).filter(|&i| plan.is_model(i)).collect();
    let mut s = Scratch::new(plan.len());
    let mut rows = Vec::new();
    let mut marginals: Vec<Vec<Vec<f64>>> = vec![Vec::new(); plan.len()];
    'rows: for r in 0..table.n_rows() {
        for (&i, col) in &columns {
            match col[r] {
                Some(v) => s.values[i] = v,
                None => continue 'rows,
            }
        }
        let mut acc: Vec<Vec<f64>> = (0..plan.len()).map(|i| vec![0.0; if plan.is_model(i) { plan.cards[i].unwrap() } else { 0 }]).collect();
        walk(&plan, 0, 1.0, &mut s, &mut acc, &matters, &need)?;
        rows.push(r);
        for &i in &models {
            marginals[i].push(std::mem::take(&mut acc[i]));
        }
    }
    let marginals = models.iter().map(|&i| (plan.node(i).id.clone(), std::mem::take(&mut marginals[i]))).collect();
    Ok(Scores { rows, marginals })
}

fn walk(plan: &Plan, depth: usize, weight: f64, s: &mut Scratch, acc: &mut [Vec<f64>], matters: &[bool], need: &BTreeSet<usize>) -> Result<(), EvalError> {
    if depth == plan.order.len() {
        for (i, a) in acc.iter_mut().enumerate() {
            if plan.is_model(i) {
                for (t, p) in a.iter_mut().zip(&s.simplex[i]) {
                    *t += weight * p;
                }
            }
        }
        return Ok(());
    }
    let i = plan.order[depth];
    if !plan.is_model(i) {
        if !need.contains(&i) {
            // Not an input of any model; its value is irrelevant here.
            s.values[i] = Value::Discrete(0);
        }
        return walk(plan, depth + 1, weight, s, acc, matters, need);
    }
    let p = plan.model_proba(i, &s.values, &s.simplex, &mut s.buf)?;
    s.simplex[i] = p.clone();
    if matters[i] {
        for (k, &pk) in p.iter().enumerate() {
            if pk > 0.0 {
                s.values[i] = Value::Discrete(k);
                s.simplex[i] = p.clone();
                walk(plan, depth + 1, weight * pk, s, acc, matters, need)?;
            }
        }
    } else {
        s.values[i] = Value::Discrete(argmax(&p));
        walk(plan, depth + 1, weight, s, acc, matters, need)?;
    }
    Ok(())
}
