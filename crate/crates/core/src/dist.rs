//! Parametric distributions for feature nodes and priors.
//!
//! Discrete draws are category indices; continuous draws are reals. All
//! log-densities are natural logs and return `f64::NEG_INFINITY` outside the
//! support.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaSampler, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Tolerance on simplex sums.
pub const SIMPLEX_TOL: f64 = 1e-9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid distribution: {0}")]
    InvalidSpec(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("conditional distribution needs a parent configuration")]
    NeedsParents,
    #[error("parent configuration {row} out of range for a table with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("need at least {needed} data points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfBounds { value: f64, lo: f64, hi: f64 },
    #[error("value {0} is not strictly positive")]
    NotPositive(f64),
    #[error("zero variance: constant feature")]
    ZeroVariance,
    #[error("all counts are zero and no prior was given")]
    NoCounts,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("histograms have different bin edges")]
    MismatchedBins,
}

/// A realised node value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Discrete(usize),
    Real(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Discrete(k) => k as f64,
            Value::Real(x) => x,
        }
    }

    pub fn as_discrete(self) -> Option<usize> {
        match self {
            Value::Discrete(k) => Some(k),
            Value::Real(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DistSpec {
    Categorical {
        probs: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
    #[serde(rename = "onehot_categorical")]
    OneHotCategorical {
        probs: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
    #[serde(rename = "truncnorm")]
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    /// One simplex row per parent configuration. Rows are indexed in
    /// mixed radix over the node's parents, first parent most significant.
    ConditionalCategorical {
        table: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
}

pub(crate) fn check_simplex(p: &[f64], what: &str) -> Result<(), DistError> {
    if p.is_empty() {
        return Err(DistError::InvalidSpec(format!("{what}: empty probability vector")));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(DistError::InvalidSpec(format!("{what}: entries must be finite and >= 0")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(DistError::InvalidSpec(format!("{what}: probabilities sum to {s}, not 1")));
    }
    Ok(())
}

pub fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding slack above the cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard-normal mass on [a, b].
pub(crate) fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

fn sample_std_truncated<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if a > 0.0 {
        return -sample_std_truncated(rng, -b, -a);
    }
    if std_normal_mass(a, b) > 0.05 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a && z <= b {
                return z;
            }
        }
    }
    // Inverse CDF; the interval lies at or below the mode so the lower-tail
    // CDF keeps its precision.
    let std = Normal::standard();
    let (fa, fb) = (std_normal_cdf(a), std_normal_cdf(b));
    let u: f64 = rng.random();
    std.inverse_cdf(fa + u * (fb - fa)).clamp(a, b)
}

impl DistSpec {
    pub fn categorical(probs: Vec<f64>) -> Self {
        DistSpec::Categorical { probs, labels: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            DistSpec::Categorical { probs, labels } | DistSpec::OneHotCategorical { probs, labels } => {
                check_simplex(probs, "categorical")?;
                if !labels.is_empty() && labels.len() != probs.len() {
                    return Err(DistError::InvalidSpec(format!("{} labels for {} categories", labels.len(), probs.len())));
                }
                Ok(())
            }
            DistSpec::TruncatedNormal { mu, sigma, lo, hi } => {
                if !(mu.is_finite() && sigma.is_finite() && *sigma > 0.0) {
                    return Err(DistError::InvalidSpec("truncnorm needs finite mu and sigma > 0".into()));
                }
                if lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less) {
                    return Err(DistError::InvalidSpec(format!("truncnorm bounds need lo < hi, got [{lo}, {hi}]")));
                }
                if std_normal_mass((lo - mu) / sigma, (hi - mu) / sigma) <= 0.0 {
                    return Err(DistError::InvalidSpec("truncnorm has no mass inside its bounds".into()));
                }
                Ok(())
            }
            DistSpec::Gamma { shape, rate } => {
                if shape.is_finite() && rate.is_finite() && *shape > 0.0 && *rate > 0.0 {
                    Ok(())
                } else {
                    Err(DistError::InvalidSpec("gamma needs shape > 0 and rate > 0".into()))
                }
            }
            DistSpec::ConditionalCategorical { table, labels } => {
                let k = table.first().map(Vec::len).ok_or_else(|| DistError::InvalidSpec("empty table".into()))?;
                for (i, row) in table.iter().enumerate() {
                    if row.len() != k {
                        return Err(DistError::InvalidSpec(format!("table row {i} has {} entries, expected {k}", row.len())));
                    }
                    check_simplex(row, &format!("table row {i}"))?;
                }
                if !labels.is_empty() && labels.len() != k {
                    return Err(DistError::InvalidSpec(format!("{} labels for {k} categories", labels.len())));
                }
                Ok(())
            }
        }
    }

    /// Category count for discrete variants, `None` for continuous ones.
    pub fn n_categories(&self) -> Option<usize> {
        match self {
            DistSpec::Categorical { probs, .. } | DistSpec::OneHotCategorical { probs, .. } => Some(probs.len()),
            DistSpec::ConditionalCategorical { table, .. } => Some(table.first().map_or(0, Vec::len)),
            DistSpec::TruncatedNormal { .. } | DistSpec::Gamma { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.n_categories().is_some()
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, DistSpec::ConditionalCategorical { .. })
    }

    pub fn labels(&self) -> &[String] {
        match self {
            DistSpec::Categorical { labels, .. } | DistSpec::OneHotCategorical { labels, .. } | DistSpec::ConditionalCategorical { labels, .. } => labels,
            _ => &[],
        }
    }

    /// Probability vector for a discrete variant; `row` selects the parent
    /// configuration of a conditional table.
    pub fn probs(&self, row: Option<usize>) -> Result<&[f64], DistError> {
        match self {
            DistSpec::Categorical { probs, .. } | DistSpec::OneHotCategorical { probs, .. } => Ok(probs),
            DistSpec::ConditionalCategorical { table, .. } => {
                let row = row.ok_or(DistError::NeedsParents)?;
                table.get(row).map(Vec::as_slice).ok_or(DistError::RowOutOfRange { row, rows: table.len() })
            }
            _ => Err(DistError::TypeMismatch("continuous distribution has no probability vector".into())),
        }
    }

    /// Analytic mean and variance of the draw (category index for discrete
    /// variants).
    pub fn moments(&self) -> Option<(f64, f64)> {
        match self {
            DistSpec::Categorical { probs, .. } | DistSpec::OneHotCategorical { probs, .. } => {
                let m: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                let v: f64 = probs.iter().enumerate().map(|(k, p)| (k as f64 - m).powi(2) * p).sum();
                Some((m, v))
            }
            DistSpec::TruncatedNormal { mu, sigma, lo, hi } => {
                let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
                let z = std_normal_mass(a, b);
                let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
                let ta = if a.is_finite() { a * pa } else { 0.0 };
                let tb = if b.is_finite() { b * pb } else { 0.0 };
                let m = mu + sigma * (pa - pb) / z;
                let v = sigma * sigma * (1.0 + (ta - tb) / z - ((pa - pb) / z).powi(2));
                Some((m, v))
            }
            DistSpec::Gamma { shape, rate } => Some((shape / rate, shape / (rate * rate))),
            DistSpec::ConditionalCategorical { .. } => None,
        }
    }

    /// One draw. `row` is required for conditional tables and ignored otherwise.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, row: Option<usize>) -> Result<Value, DistError> {
        Ok(match self {
            DistSpec::Categorical { .. } | DistSpec::OneHotCategorical { .. } | DistSpec::ConditionalCategorical { .. } => {
                Value::Discrete(draw_index(rng, self.probs(row)?))
            }
            DistSpec::TruncatedNormal { mu, sigma, lo, hi } => {
                let z = sample_std_truncated(rng, (lo - mu) / sigma, (hi - mu) / sigma);
                Value::Real((mu + sigma * z).clamp(*lo, *hi))
            }
            DistSpec::Gamma { shape, rate } => {
                let g = GammaSampler::new(*shape, 1.0 / rate).map_err(|e| DistError::InvalidSpec(e.to_string()))?;
                // Underflow to exactly 0 is possible for tiny shapes.
                Value::Real(g.sample(rng).max(f64::MIN_POSITIVE))
            }
        })
    }

    /// Log density (continuous) or log mass (discrete) at `value`.
    pub fn log_prob_given(&self, value: Value, row: Option<usize>) -> Result<f64, DistError> {
        match (self, value) {
            (DistSpec::TruncatedNormal { mu, sigma, lo, hi }, Value::Real(x)) => {
                if x < *lo || x > *hi || x.is_nan() {
                    return Ok(f64::NEG_INFINITY);
                }
                let z = (x - mu) / sigma;
                let mass = std_normal_mass((lo - mu) / sigma, (hi - mu) / sigma);
                Ok(-0.5 * z * z - LN_SQRT_2PI - sigma.ln() - mass.ln())
            }
            (DistSpec::Gamma { shape, rate }, Value::Real(x)) => {
                if x <= 0.0 || x.is_nan() {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * x.ln() - rate * x)
            }
            (DistSpec::TruncatedNormal { .. } | DistSpec::Gamma { .. }, Value::Discrete(_)) => {
                Err(DistError::TypeMismatch("category index given to a continuous distribution".into()))
            }
            (_, Value::Discrete(k)) => {
                let p = self.probs(row)?;
                Ok(p.get(k).map_or(f64::NEG_INFINITY, |&pk| pk.ln()))
            }
            (_, Value::Real(_)) => Err(DistError::TypeMismatch("real value given to a discrete distribution".into())),
        }
    }

    pub fn log_prob(&self, value: Value) -> Result<f64, DistError> {
        self.log_prob_given(value, None)
    }
}

/// `n` i.i.d. draws from an unconditional distribution.
pub fn sample<R: Rng + ?Sized>(dist: &DistSpec, rng: &mut R, n: usize) -> Result<Vec<Value>, DistError> {
    dist.validate()?;
    if dist.is_conditional() {
        return Err(DistError::NeedsParents);
    }
    (0..n).map(|_| dist.sample_one(rng, None)).collect()
}

pub fn log_prob(dist: &DistSpec, value: Value) -> Result<f64, DistError> {
    dist.log_prob(value)
}

/// Prior over a node's category probabilities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSpec {
    #[default]
    None,
    Dirichlet {
        concentration: Vec<f64>,
        /// Mixing weight of the prior mean into a model node's output.
        /// Ignored on feature nodes.
        #[serde(default, skip_serializing_if = "is_zero")]
        smoothing: f64,
    },
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl PriorSpec {
    pub fn dirichlet(concentration: Vec<f64>) -> Self {
        PriorSpec::Dirichlet { concentration, smoothing: 0.0 }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PriorSpec::None)
    }

    pub fn validate(&self, n_categories: Option<usize>) -> Result<(), DistError> {
        match self {
            PriorSpec::None => Ok(()),
            PriorSpec::Dirichlet { concentration, smoothing } => {
                if concentration.is_empty() || concentration.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(DistError::InvalidSpec("dirichlet concentration entries must be > 0".into()));
                }
                if !(0.0..=1.0).contains(smoothing) {
                    return Err(DistError::InvalidSpec("dirichlet smoothing must lie in [0, 1]".into()));
                }
                match n_categories {
                    Some(k) if k == concentration.len() => Ok(()),
                    Some(k) => Err(DistError::DimensionMismatch { expected: k, got: concentration.len() }),
                    None => Err(DistError::InvalidSpec("dirichlet prior on a continuous node".into())),
                }
            }
        }
    }

    /// Prior mean of the category probabilities.
    pub fn mean(&self) -> Option<Vec<f64>> {
        match self {
            PriorSpec::None => None,
            PriorSpec::Dirichlet { concentration, .. } => {
                let s: f64 = concentration.iter().sum();
                Some(concentration.iter().map(|a| a / s).collect())
            }
        }
    }

    /// Log prior density at a point of the simplex; 0 when there is no prior.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64, DistError> {
        match self {
            PriorSpec::None => Ok(0.0),
            PriorSpec::Dirichlet { concentration, .. } => {
                if theta.len() != concentration.len() {
                    return Err(DistError::DimensionMismatch { expected: concentration.len(), got: theta.len() });
                }
                let total: f64 = concentration.iter().sum();
                let norm = ln_gamma(total) - concentration.iter().map(|&a| ln_gamma(a)).sum::<f64>();
                let body: f64 = concentration.iter().zip(theta).map(|(&a, &t)| if a == 1.0 { 0.0 } else { (a - 1.0) * t.ln() }).sum();
                Ok(norm + body)
            }
        }
    }
}

/// Posterior-mean categorical estimate from counts; maximum likelihood when
/// `prior` is `None`.
pub fn fit_categorical(counts: &[u64], prior: &PriorSpec) -> Result<DistSpec, DistError> {
    if counts.is_empty() {
        return Err(DistError::TooFewPoints { needed: 1, got: 0 });
    }
    let probs = match prior {
        PriorSpec::None => {
            let total: u64 = counts.iter().sum();
            if total == 0 {
                return Err(DistError::NoCounts);
            }
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        }
        PriorSpec::Dirichlet { concentration, .. } => {
            prior.validate(Some(counts.len()))?;
            let post: Vec<f64> = counts.iter().zip(concentration).map(|(&c, &a)| c as f64 + a).collect();
            let s: f64 = post.iter().sum();
            post.into_iter().map(|x| x / s).collect()
        }
    };
    Ok(DistSpec::categorical(probs))
}

fn mean_and_pop_var(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let m = data.iter().sum::<f64>() / n;
    let v = data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

/// Method-of-moments truncated normal: sample mean and population standard
/// deviation, bounds as given. No truncation correction is applied.
pub fn fit_truncated_normal(data: &[f64], lo: f64, hi: f64) -> Result<DistSpec, DistError> {
    if data.len() < 2 {
        return Err(DistError::TooFewPoints { needed: 2, got: data.len() });
    }
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(DistError::InvalidSpec(format!("bounds need lo < hi, got [{lo}, {hi}]")));
    }
    if let Some(&bad) = data.iter().find(|&&x| !(x >= lo && x <= hi)) {
        return Err(DistError::OutOfBounds { value: bad, lo, hi });
    }
    let (mu, var) = mean_and_pop_var(data);
    if var <= 0.0 {
        return Err(DistError::ZeroVariance);
    }
    Ok(DistSpec::TruncatedNormal { mu, sigma: var.sqrt(), lo, hi })
}

/// Method-of-moments gamma: shape = mean²/var, rate = mean/var.
pub fn fit_gamma(data: &[f64]) -> Result<DistSpec, DistError> {
    if data.len() < 2 {
        return Err(DistError::TooFewPoints { needed: 2, got: data.len() });
    }
    if let Some(&bad) = data.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
        return Err(DistError::NotPositive(bad));
    }
    let (m, v) = mean_and_pop_var(data);
    if v <= 0.0 {
        return Err(DistError::ZeroVariance);
    }
    Ok(DistSpec::Gamma { shape: m * m / v, rate: m / v })
}

/// KL(p ‖ q) in nats over a shared discrete support. Terms with `p_k = 0`
/// contribute nothing; `p_k > 0` with `q_k = 0` yields `f64::INFINITY`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, DistError> {
    if p.len() != q.len() {
        return Err(DistError::DimensionMismatch { expected: p.len(), got: q.len() });
    }
    if p.iter().chain(q).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(DistError::InvalidSpec("KL inputs must be finite and non-negative".into()));
    }
    let mut acc = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk == 0.0 {
            continue;
        }
        if qk == 0.0 {
            return Ok(f64::INFINITY);
        }
        acc += pk * (pk / qk).ln();
    }
    // Rounding can push an exact-zero divergence a hair below zero.
    Ok(acc.max(0.0))
}

/// Fixed-edge histogram with raw counts and normalised frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
}

impl Histogram {
    pub fn from_counts(bin_edges: Vec<f64>, counts: Vec<u64>) -> Result<Self, DistError> {
        if bin_edges.len() != counts.len() + 1 {
            return Err(DistError::DimensionMismatch { expected: bin_edges.len().saturating_sub(1), got: counts.len() });
        }
        if bin_edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(DistError::InvalidSpec("bin edges must be strictly increasing".into()));
        }
        let frequencies = normalise_counts(&counts, 0.0);
        Ok(Histogram { bin_edges, counts, frequencies })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Adds `other`'s counts into `self`.
    pub fn merge(&mut self, other: &Histogram) -> Result<(), DistError> {
        if self.bin_edges != other.bin_edges {
            return Err(DistError::MismatchedBins);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.frequencies = normalise_counts(&self.counts, 0.0);
        Ok(())
    }

    /// Frequencies after adding `alpha` pseudo-counts to every bin.
    pub fn smoothed_frequencies(&self, alpha: f64) -> Vec<f64> {
        normalise_counts(&self.counts, alpha)
    }
}

fn normalise_counts(counts: &[u64], alpha: f64) -> Vec<f64> {
    let total = counts.iter().sum::<u64>() as f64 + alpha * counts.len() as f64;
    if total == 0.0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| (c as f64 + alpha) / total).collect()
}

/// KL(p ‖ q) between two histograms on identical bins. `smoothing` adds
/// Laplace pseudo-counts to both; 0 disables it.
pub fn kl_histograms(p: &Histogram, q: &Histogram, smoothing: f64) -> Result<f64, DistError> {
    if p.bin_edges != q.bin_edges {
        return Err(DistError::MismatchedBins);
    }
    if smoothing > 0.0 {
        kl_divergence(&p.smoothed_frequencies(smoothing), &q.smoothed_frequencies(smoothing))
    } else {
        kl_divergence(&p.frequencies, &q.frequencies)
    }
}
