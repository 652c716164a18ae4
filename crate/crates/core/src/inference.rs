//! Joint probabilities, exact enumeration, the parameter posterior and a
//! random-walk Metropolis sampler.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::dist::{DistSpec, PriorSpec, Value};
use crate::graph::{Dag, NodeId, NodeKind};
use crate::plan::{EvalError, Plan};
use crate::rng;
use crate::simulate::Scratch;

pub const DEFAULT_STATE_CAP: f64 = 1e7;

/// Model probabilities are clamped to this margin before taking logs in the
/// posterior, so saturated predictions stay finite.
const LOG_CLAMP: f64 = 1e-12;

/// A value for every node of a network.
pub type Assignment = BTreeMap<NodeId, Value>;

fn values_of(plan: &Plan, a: &Assignment) -> Result<Vec<Value>, EvalError> {
    (0..plan.len())
        .map(|i| {
            let id = &plan.node(i).id;
            a.get(id).copied().ok_or_else(|| EvalError::MissingValue(id.to_string()))
        })
        .collect()
}

/// Log of the product of every node's conditional given its parents, plus
/// the log prior density of feature parameters that carry a prior.
/// Contradictory assignments give negative infinity.
pub fn joint_log_prob(dag: &Dag, a: &Assignment) -> Result<f64, EvalError> {
    let plan = Plan::new(dag)?;
    let values = values_of(&plan, a)?;
    let mut s = Scratch::new(plan.len());
    let mut total = 0.0;
    for &i in &plan.order {
        total += plan.node_log_prob(i, &values, &mut s.simplex, &mut s.buf)?;
        let node = plan.node(i);
        if let (NodeKind::Feature(d), PriorSpec::Dirichlet { .. }) = (&node.kind, &node.prior) {
            total += feature_prior_log_density(d, &node.prior).map_err(|source| EvalError::Dist { node: node.id.to_string(), source })?;
        }
    }
    Ok(total)
}

fn feature_prior_log_density(d: &DistSpec, prior: &PriorSpec) -> Result<f64, crate::dist::DistError> {
    match d {
        DistSpec::ConditionalCategorical { table, .. } => table.iter().map(|row| prior.log_density(row)).sum(),
        _ => prior.log_density(d.probs(None)?),
    }
}

/// Number of joint states, saturating in `f64`; errors on continuous nodes.
pub fn state_space_size(plan: &Plan) -> Result<f64, EvalError> {
    let mut states = 1.0f64;
    for i in 0..plan.len() {
        states *= plan.cards[i].ok_or_else(|| EvalError::Continuous(plan.node(i).id.to_string()))? as f64;
    }
    Ok(states)
}

/// Calls `visit(values, log_prob)` for every joint assignment of non-zero
/// probability. Fails when the state space exceeds `cap`.
pub fn enumerate_joint(dag: &Dag, cap: f64, mut visit: impl FnMut(&[Value], f64)) -> Result<(), EvalError> {
    let plan = Plan::new(dag)?;
    let states = state_space_size(&plan)?;
    if states > cap {
        return Err(EvalError::StateSpace { states, cap });
    }
    let mut s = Scratch::new(plan.len());
    descend(&plan, 0, 0.0, &mut s, &mut visit)
}

fn descend(plan: &Plan, depth: usize, lp: f64, s: &mut Scratch, visit: &mut dyn FnMut(&[Value], f64)) -> Result<(), EvalError> {
    if depth == plan.order.len() {
        visit(&s.values, lp);
        return Ok(());
    }
    let i = plan.order[depth];
    let probs: Vec<f64> = if plan.is_model(i) {
        let p = plan.model_proba(i, &s.values, &s.simplex, &mut s.buf)?;
        s.simplex[i] = p.clone();
        p
    } else {
        let row = plan.table_row(i, &s.values)?;
        let d = plan.dist(i).expect("feature");
        d.probs(row).map_err(|source| EvalError::Dist { node: plan.node(i).id.to_string(), source })?.to_vec()
    };
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            s.values[i] = Value::Discrete(k);
            descend(plan, depth + 1, lp + p.ln(), s, visit)?;
        }
    }
    Ok(())
}

/// Marginal of the output node by summing the joint over all assignments.
pub fn exact_output_distribution(dag: &Dag) -> Result<DistSpec, EvalError> {
    exact_output_distribution_capped(dag, DEFAULT_STATE_CAP)
}

pub fn exact_output_distribution_capped(dag: &Dag, cap: f64) -> Result<DistSpec, EvalError> {
    let out = dag.index_of(dag.output().as_str()).ok_or_else(|| EvalError::MissingValue(dag.output().to_string()))?;
    let node = &dag.nodes()[out];
    let k = node.n_categories().ok_or_else(|| EvalError::Continuous(node.id.to_string()))?;
    let mut probs = vec![0.0; k];
    enumerate_joint(dag, cap, |v, lp| probs[v[out].as_discrete().expect("discrete")] += lp.exp())?;
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(DistSpec::Categorical { probs, labels: node.class_labels() })
}

/// Additive log-ratio transform against the last category.
pub fn alr(p: &[f64]) -> Vec<f64> {
    let last = p[p.len() - 1].ln();
    p[..p.len() - 1].iter().map(|q| q.ln() - last).collect()
}

pub fn alr_inverse(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(0.0, f64::max);
    let mut p: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    p.push((-m).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// log |det d(p_1..p_{K-1}) / du| of [`alr_inverse`], which is Σ_k ln p_k
/// over all K categories.
pub fn alr_log_jacobian(p: &[f64]) -> f64 {
    p.iter().map(|q| q.ln()).sum()
}

/// One feature node's parameters inside the unconstrained vector: `rows`
/// simplexes of `k` categories, each stored as `k - 1` log ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaBlock {
    pub node: NodeId,
    pub index: usize,
    pub rows: usize,
    pub k: usize,
    pub offset: usize,
}

/// Layout of the unconstrained parameter vector: every discrete feature
/// node with a Dirichlet prior, in topological order, rows in table order.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaLayout {
    pub blocks: Vec<ThetaBlock>,
    pub dim: usize,
}

impl ThetaLayout {
    pub fn of(dag: &Dag) -> Result<Self, EvalError> {
        let plan = Plan::new(dag)?;
        let mut blocks = Vec::new();
        let mut offset = 0;
        for &i in &plan.order {
            let node = plan.node(i);
            let (NodeKind::Feature(d), PriorSpec::Dirichlet { .. }) = (&node.kind, &node.prior) else { continue };
            let rows = match d {
                DistSpec::ConditionalCategorical { table, .. } => table.len(),
                _ => 1,
            };
            let k = d.n_categories().ok_or_else(|| EvalError::Continuous(node.id.to_string()))?;
            blocks.push(ThetaBlock { node: node.id.clone(), index: i, rows, k, offset });
            offset += rows * (k - 1);
        }
        Ok(ThetaLayout { blocks, dim: offset })
    }

    fn check(&self, theta: &[f64]) -> Result<(), EvalError> {
        if theta.len() != self.dim {
            return Err(EvalError::Config(format!("theta has {} entries, layout needs {}", theta.len(), self.dim)));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(EvalError::Config("theta has non-finite entries".into()));
        }
        Ok(())
    }

    /// The unconstrained vector of the network's current parameters.
    pub fn current(&self, dag: &Dag) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim);
        for b in &self.blocks {
            let d = dag.nodes()[b.index].dist().expect("feature block");
            for r in 0..b.rows {
                let row = if d.is_conditional() { Some(r) } else { None };
                theta.extend(alr(d.probs(row).expect("discrete block")));
            }
        }
        theta
    }

    /// Constrained simplexes per block and row.
    pub fn constrain(&self, theta: &[f64]) -> Result<Vec<Vec<Vec<f64>>>, EvalError> {
        self.check(theta)?;
        Ok(self.blocks.iter().map(|b| (0..b.rows).map(|r| alr_inverse(&theta[b.offset + r * (b.k - 1)..b.offset + (r + 1) * (b.k - 1)])).collect()).collect())
    }

    /// Column names of the constrained parameters: `node[k]`, or
    /// `node[row][k]` for conditional tables.
    pub fn names(&self, dag: &Dag) -> Vec<String> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let conditional = dag.nodes()[b.index].dist().is_some_and(DistSpec::is_conditional);
            for r in 0..b.rows {
                for k in 0..b.k {
                    out.push(if conditional { format!("{}[{r}][{k}]", b.node) } else { format!("{}[{k}]", b.node) });
                }
            }
        }
        out
    }

    pub fn constrained_flat(&self, theta: &[f64]) -> Result<Vec<f64>, EvalError> {
        Ok(self.constrain(theta)?.into_iter().flatten().flatten().collect())
    }

    /// A copy of `dag` with the block parameters replaced by `theta`.
    pub fn install(&self, dag: &Dag, theta: &[f64]) -> Result<Dag, EvalError> {
        let simplexes = self.constrain(theta)?;
        let mut out = dag.clone();
        for (b, rows) in self.blocks.iter().zip(simplexes) {
            let mut node = out.nodes()[b.index].clone();
            if let NodeKind::Feature(d) = &mut node.kind {
                match d {
                    DistSpec::Categorical { probs, .. } | DistSpec::OneHotCategorical { probs, .. } => *probs = rows[0].clone(),
                    DistSpec::ConditionalCategorical { table, .. } => *table = rows,
                    _ => unreachable!("blocks are discrete"),
                }
            }
            out = out.with_node(node)?;
        }
        Ok(out)
    }
}

/// Log posterior over the layout's parameters given observed rows.
///
/// Counts of the parameterised nodes are tabulated once; every other
/// observed node contributes a constant log-likelihood term.
pub struct Posterior {
    pub layout: ThetaLayout,
    counts: Vec<Vec<Vec<f64>>>,
    priors: Vec<PriorSpec>,
    constant: f64,
}

impl Posterior {
    pub fn new(dag: &Dag, data: &SampleBatch) -> Result<Self, EvalError> {
        let plan = Plan::new(dag)?;
        let layout = ThetaLayout::of(dag)?;
        let cols: Vec<Option<&[Value]>> = (0..plan.len()).map(|i| data.column(plan.node(i).id.as_str())).collect();
        let mut counts: Vec<Vec<Vec<f64>>> = layout.blocks.iter().map(|b| vec![vec![0.0; b.k]; b.rows]).collect();
        let block_of: BTreeMap<usize, usize> = layout.blocks.iter().enumerate().map(|(j, b)| (b.index, j)).collect();
        let mut s = Scratch::new(plan.len());
        let mut known = vec![false; plan.len()];
        let mut constant = 0.0;
        for r in 0..data.n_rows {
            for i in 0..plan.len() {
                known[i] = cols[i].is_some();
                if let Some(c) = cols[i] {
                    s.values[i] = c[r];
                }
            }
            let mut has_simplex = vec![false; plan.len()];
            for &i in &plan.order {
                let parents_known = plan.parents[i].iter().all(|&p| known[p] && (!plan.is_model(p) || has_simplex[p]));
                if !parents_known {
                    continue;
                }
                if plan.is_model(i) {
                    let p = plan.model_proba(i, &s.values, &s.simplex, &mut s.buf)?;
                    has_simplex[i] = true;
                    if known[i] {
                        let k = s.values[i]
                            .as_discrete()
                            .ok_or_else(|| EvalError::Encoding { node: plan.node(i).id.to_string(), detail: "model column needs class indices".into() })?;
                        constant += p[k].clamp(LOG_CLAMP, 1.0 - LOG_CLAMP).ln();
                    }
                    s.simplex[i] = p;
                } else if known[i] {
                    if let Some(&j) = block_of.get(&i) {
                        let row = plan.table_row(i, &s.values)?.unwrap_or(0);
                        let k = s.values[i].as_discrete().ok_or_else(|| EvalError::Encoding {
                            node: plan.node(i).id.to_string(),
                            detail: "discrete column needs category indices".into(),
                        })?;
                        counts[j][row][k] += 1.0;
                    } else {
                        constant += plan.node_log_prob(i, &s.values, &mut s.simplex, &mut s.buf)?;
                    }
                }
            }
        }
        let priors = layout.blocks.iter().map(|b| plan.node(b.index).prior.clone()).collect();
        Ok(Posterior { layout, counts, priors, constant })
    }

    /// Density on the constrained scale: log-likelihood plus log prior.
    pub fn log_density_constrained(&self, theta: &[f64]) -> Result<f64, EvalError> {
        let simplexes = self.layout.constrain(theta)?;
        let mut total = self.constant;
        for ((rows, counts), prior) in simplexes.iter().zip(&self.counts).zip(&self.priors) {
            for (p, c) in rows.iter().zip(counts) {
                total += c.iter().zip(p).filter(|(&n, _)| n > 0.0).map(|(n, q)| n * q.ln()).sum::<f64>();
                total += prior.log_density(p).map_err(|source| EvalError::Dist { node: "prior".into(), source })?;
            }
        }
        Ok(total)
    }

    /// Density of the unconstrained vector, i.e. including the log-Jacobian
    /// of the log-ratio transform.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64, EvalError> {
        let jac: f64 = self.layout.constrain(theta)?.iter().flatten().map(|p| alr_log_jacobian(p)).sum();
        Ok(self.log_density_constrained(theta)? + jac)
    }
}

pub fn posterior_log_density(dag: &Dag, data: &SampleBatch, theta: &[f64]) -> Result<f64, EvalError> {
    Posterior::new(dag, data)?.log_density(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Retained draws after burn-in and thinning.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal_scale: f64,
    pub seed: u64,
    /// Scale adaptation during burn-in.
    #[serde(default = "yes")]
    pub adapt: bool,
}

fn yes() -> bool {
    true
}

impl McmcConfig {
    pub fn new(n_samples: usize, burn_in: usize, proposal_scale: f64, seed: u64) -> Self {
        McmcConfig { n_samples, burn_in, thinning: 1, proposal_scale, seed, adapt: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub final_scale: f64,
}

const ADAPT_WINDOW: usize = 50;

/// Random-walk Metropolis with isotropic Gaussian proposals. During burn-in
/// the scale is multiplied by 1.1 after each 50-step window accepting more
/// than half its proposals and by 0.9 after one accepting under a fifth; it
/// is frozen afterwards.
pub fn rwm_sample(mut target: impl FnMut(&[f64]) -> f64, init: &[f64], config: &McmcConfig) -> Result<Chain, EvalError> {
    if config.n_samples == 0 || config.thinning == 0 {
        return Err(EvalError::Config("n_samples and thinning must be >= 1".into()));
    }
    if !(config.proposal_scale.is_finite() && config.proposal_scale > 0.0) {
        return Err(EvalError::Config(format!("proposal scale must be positive, got {}", config.proposal_scale)));
    }
    let mut x = init.to_vec();
    let mut lp = target(&x);
    if !lp.is_finite() {
        return Err(EvalError::Config("target density is not finite at the initial point".into()));
    }
    let mut stream = rng::stream(config.seed);
    let mut scale = config.proposal_scale;
    let total = config.burn_in + config.n_samples * config.thinning;
    let mut draws = Vec::with_capacity(config.n_samples);
    let (mut window_acc, mut window_n, mut accepted) = (0usize, 0usize, 0usize);
    let mut proposal = vec![0.0; x.len()];
    for step in 0..total {
        for (y, xi) in proposal.iter_mut().zip(&x) {
            let z: f64 = stream.sample(StandardNormal);
            *y = xi + scale * z;
        }
        let lq = target(&proposal);
        let u: f64 = stream.random();
        let accept = lq.is_finite() && u.ln() < lq - lp;
        if accept {
            std::mem::swap(&mut x, &mut proposal);
            lp = lq;
        }
        if step < config.burn_in {
            window_acc += usize::from(accept);
            window_n += 1;
            if config.adapt && window_n == ADAPT_WINDOW {
                let rate = window_acc as f64 / ADAPT_WINDOW as f64;
                if rate > 0.5 {
                    scale *= 1.1;
                } else if rate < 0.2 {
                    scale *= 0.9;
                }
                window_acc = 0;
                window_n = 0;
            }
        } else {
            accepted += usize::from(accept);
            if (step - config.burn_in + 1).is_multiple_of(config.thinning) {
                draws.push(x.clone());
            }
        }
    }
    let kept = total - config.burn_in;
    Ok(Chain { draws, acceptance_rate: accepted as f64 / kept as f64, final_scale: scale })
}

/// Chain dump: a header of constrained parameter names, one row per draw.
pub fn chain_csv(layout: &ThetaLayout, names: &[String], chain: &Chain) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(names).expect("in-memory write");
    for d in &chain.draws {
        let row: Vec<String> = layout.constrained_flat(d)?.iter().map(|v| format!("{v:?}")).collect();
        w.write_record(&row).expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;

    fn coin(prior: bool) -> Dag {
        let mut n = Node::feature("x", DistSpec::categorical(vec![0.5, 0.5]));
        if prior {
            n = n.with_prior(PriorSpec::dirichlet(vec![1.0, 1.0]));
        }
        Dag::new(vec![n], "x")
    }

    fn batch(id: &str, values: &[usize]) -> SampleBatch {
        let mut columns = BTreeMap::new();
        columns.insert(NodeId::from(id), values.iter().map(|&k| Value::Discrete(k)).collect());
        SampleBatch { n_rows: values.len(), columns, simplexes: BTreeMap::new() }
    }

    #[test]
    fn independent_features() {
        let dag = Dag::new(vec![Node::feature("a", DistSpec::categorical(vec![0.5, 0.5])), Node::feature("b", DistSpec::categorical(vec![0.5, 0.5]))], "a");
        let a: Assignment = [("a".into(), Value::Discrete(0)), ("b".into(), Value::Discrete(1))].into_iter().collect();
        assert!((joint_log_prob(&dag, &a).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        let partial: Assignment = [("a".into(), Value::Discrete(0))].into_iter().collect();
        assert_eq!(joint_log_prob(&dag, &partial), Err(EvalError::MissingValue("b".into())));
    }

    #[test]
    fn alr_round_trip_and_jacobian() {
        let p = vec![0.2, 0.5, 0.3];
        let back = alr_inverse(&alr(&p));
        for (a, b) in p.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        // finite-difference determinant of u -> (p1, p2)
        let u = alr(&p);
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[c] += h;
            dn[c] -= h;
            let (pu, pd) = (alr_inverse(&up), alr_inverse(&dn));
            for r in 0..2 {
                jac[r][c] = (pu[r] - pd[r]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        assert!((det.ln() - alr_log_jacobian(&p)).abs() < 1e-6);
    }

    #[test]
    fn beta_posterior_mode() {
        let dag = coin(true);
        let post = Posterior::new(&dag, &batch("x", &[0, 0, 0, 1])).unwrap();
        let at = |p: f64| post.log_density_constrained(&alr(&[p, 1.0 - p])).unwrap();
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let best = grid.iter().copied().max_by(|a, b| at(*a).total_cmp(&at(*b))).unwrap();
        assert!((best - 0.75).abs() < 1e-9);
        // proportional to p^3 (1 - p)
        let d = at(0.6) - at(0.3);
        let want = 3.0 * (0.6f64 / 0.3).ln() + (0.4f64 / 0.7).ln();
        assert!((d - want).abs() < 1e-12);
    }

    #[test]
    fn empty_data_is_prior_plus_jacobian() {
        let dag = coin(true);
        let post = Posterior::new(&dag, &batch("x", &[])).unwrap();
        let theta = alr(&[0.3, 0.7]);
        let want = PriorSpec::dirichlet(vec![1.0, 1.0]).log_density(&[0.3, 0.7]).unwrap() + 0.3f64.ln() + 0.7f64.ln();
        assert!((post.log_density(&theta).unwrap() - want).abs() < 1e-12);
        assert!(post.log_density(&[0.0, 1.0]).is_err());
        assert!(post.log_density(&[f64::NAN]).is_err());
    }

    #[test]
    fn rwm_errors_and_tiny_steps() {
        let target = |x: &[f64]| -0.5 * x[0] * x[0];
        let cfg = McmcConfig::new(1000, 0, 1e-8, 3);
        let chain = rwm_sample(target, &[0.1], &cfg).unwrap();
        assert!(chain.acceptance_rate >= 0.99);
        assert_eq!(chain.draws.len(), 1000);
        assert!(rwm_sample(target, &[0.0], &McmcConfig::new(10, 0, 0.0, 1)).is_err());
        assert!(rwm_sample(|_| f64::NEG_INFINITY, &[0.0], &cfg).is_err());
    }

    #[test]
    fn chain_dump_header() {
        let dag = coin(true);
        let layout = ThetaLayout::of(&dag).unwrap();
        let chain = Chain { draws: vec![vec![0.0]], acceptance_rate: 1.0, final_scale: 1.0 };
        let text = chain_csv(&layout, &layout.names(&dag), &chain).unwrap();
        assert_eq!(text, "x[0],x[1]\n0.5,0.5\n");
    }
}
