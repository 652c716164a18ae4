//! BankSim payments: ingestion, engineered features, proxy labels for the
//! two lower classifiers, class rebalancing and the fraud-detection network.
//!
//! Features per transaction (customer c, merchant m):
//!
//! | id | feature |
//! |----|---------|
//! | x1 | amount, min-max normalised over the dataset |
//! | x2 | customer age code |
//! | x3 | customer gender |
//! | x4 | merchant category |
//! | x5 | mean step gap between c's transactions with m |
//! | x6 | population std of those gaps |
//! | x7 | mean amount of c's transactions with m |
//! | x8 | population std of those amounts |
//! | x9 | share of c's transactions that go to m |
//!
//! A pair with a single transaction has no gap; x5 and x6 take the mean
//! over pairs that do and `gap_imputed` is set.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::Table;
use crate::dist::{self, DistError, DistSpec};
use crate::graph::{Dag, ModelRef, Node};
use crate::models::{Architecture, Encoding};
use crate::rng;
use crate::stress::balanced_indices;

pub const REQUIRED_COLUMNS: [&str; 8] = ["step", "customer", "age", "gender", "merchant", "category", "amount", "fraud"];
pub const FEATURES: [&str; 9] = ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9"];
pub const RISK_CLASSES: [&str; 3] = ["low", "medium", "high"];
pub const FREQUENCY_CLASSES: [&str; 3] = ["rare", "infrequent", "regular"];
pub const FRAUD_CLASSES: [&str; 2] = ["normal", "fraud"];

pub const AGES: [&str; 8] = ["0", "1", "2", "3", "4", "5", "6", "U"];
pub const GENDERS: [&str; 4] = ["E", "F", "M", "U"];
pub const CATEGORIES: [&str; 15] = [
    "es_barsandrestaurants",
    "es_contents",
    "es_fashion",
    "es_food",
    "es_health",
    "es_home",
    "es_hotelservices",
    "es_hyper",
    "es_leisure",
    "es_otherservices",
    "es_sportsandtoys",
    "es_tech",
    "es_transportation",
    "es_travel",
    "es_wellnessandbeauty",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BankSimError {
    #[error("{0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing required column '{0}'")]
    MissingColumn(String),
    #[error("row {row}, column '{column}': {detail}")]
    BadValue { row: usize, column: String, detail: String },
    #[error("no transactions")]
    Empty,
    #[error("down-sampling needs both classes; got {normal} normal and {fraud} fraud rows")]
    SingleClass { normal: usize, fraud: usize },
    #[error("feature {feature}: {source}")]
    Fit { feature: String, source: DistError },
    #[error("{0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxnRecord {
    pub step: u32,
    pub customer: String,
    pub age: String,
    pub gender: String,
    pub merchant: String,
    pub category: String,
    pub amount: f64,
    pub fraud: bool,
}

fn clean(cell: &str) -> String {
    cell.trim().trim_matches(|c| c == '\'' || c == '"').to_owned()
}

/// Whether a header row carries every raw BankSim column.
pub fn is_raw_banksim(headers: &[String]) -> bool {
    REQUIRED_COLUMNS.iter().all(|c| headers.iter().any(|h| clean(h) == *c))
}

pub fn read_records(r: impl Read) -> Result<Vec<TxnRecord>, BankSimError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers: Vec<String> = reader.headers().map_err(|e| BankSimError::Csv(e.to_string()))?.iter().map(clean).collect();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| BankSimError::MissingColumn(name.to_owned()));
    let idx: Vec<usize> = REQUIRED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| BankSimError::Csv(e.to_string()))?;
        let row = r + 1;
        let cell = |k: usize| clean(rec.get(idx[k]).unwrap_or(""));
        let bad = |k: usize, detail: String| BankSimError::BadValue { row, column: REQUIRED_COLUMNS[k].to_owned(), detail };
        let step = cell(0).parse::<u32>().map_err(|e| bad(0, format!("'{}': {e}", cell(0))))?;
        let amount = match cell(6).parse::<f64>() {
            Ok(a) if a.is_finite() && a >= 0.0 => a,
            Ok(a) => return Err(bad(6, format!("amount must be finite and >= 0, got {a}"))),
            Err(e) => return Err(bad(6, format!("'{}': {e}", cell(6)))),
        };
        let fraud = match cell(7).as_str() {
            "0" => false,
            "1" => true,
            other => return Err(bad(7, format!("expected 0 or 1, got '{other}'"))),
        };
        out.push(TxnRecord { step, customer: cell(1), age: cell(2), gender: cell(3), merchant: cell(4), category: cell(5), amount, fraud });
    }
    if out.is_empty() {
        return Err(BankSimError::Empty);
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<Vec<TxnRecord>, BankSimError> {
    let f = std::fs::File::open(path).map_err(|e| BankSimError::Io(format!("{}: {e}", path.display())))?;
    read_records(std::io::BufReader::new(f))
}

/// Writes records with BankSim's column layout and quoting of text fields.
pub fn write_records(records: &[TxnRecord], w: impl Write) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "step,customer,age,gender,zipcodeOri,merchant,zipMerchant,category,amount,fraud")?;
    for t in records {
        writeln!(
            w,
            "{},'{}','{}','{}','28007','{}','28007','{}',{:.2},{}",
            t.step,
            t.customer,
            t.age,
            t.gender,
            t.merchant,
            t.category,
            t.amount,
            u8::from(t.fraud)
        )?;
    }
    w.flush()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub fraud: usize,
}

pub fn class_counts(records: &[TxnRecord]) -> ClassCounts {
    let fraud = records.iter().filter(|t| t.fraud).count();
    ClassCounts { normal: records.len() - fraud, fraud }
}

/// Min-max scale of transaction amounts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmountScale {
    pub min: f64,
    pub max: f64,
}

impl AmountScale {
    pub fn of(records: &[TxnRecord]) -> Self {
        let min = records.iter().map(|t| t.amount).fold(f64::INFINITY, f64::min);
        let max = records.iter().map(|t| t.amount).fold(f64::NEG_INFINITY, f64::max);
        AmountScale { min, max }
    }

    /// Clamped to [0, 1], so amounts outside the training range stay valid.
    pub fn apply(&self, amount: f64) -> f64 {
        if self.max > self.min {
            ((amount - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub step: u32,
    pub customer: String,
    pub merchant: String,
    pub amount: f64,
    pub fraud: bool,
    pub x1: f64,
    pub x2: String,
    pub x3: String,
    pub x4: String,
    pub x5: f64,
    pub x6: f64,
    pub x7: f64,
    pub x8: f64,
    pub x9: f64,
    pub gap_imputed: bool,
}

/// Mean and population standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

struct PairStats {
    gap_mean: Option<f64>,
    gap_std: Option<f64>,
    amount_mean: f64,
    amount_std: f64,
    count: usize,
}

pub fn engineer_features(records: &[TxnRecord]) -> Vec<FeatureRow> {
    engineer_features_scaled(records, AmountScale::of(records))
}

/// Steps and amounts of one customer's payments to one merchant.
type PairHistory = (Vec<u32>, Vec<f64>);

/// Features with a given amount scale, e.g. the one recorded at training.
/// Rows come back sorted by customer, step, merchant and amount.
pub fn engineer_features_scaled(records: &[TxnRecord], scale: AmountScale) -> Vec<FeatureRow> {
    let mut sorted: Vec<&TxnRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.customer, a.step, &a.merchant, &a.category)
            .cmp(&(&b.customer, b.step, &b.merchant, &b.category))
            .then(a.amount.total_cmp(&b.amount))
            .then(a.fraud.cmp(&b.fraud))
            .then((&a.age, &a.gender).cmp(&(&b.age, &b.gender)))
    });

    let mut pairs: BTreeMap<(&str, &str), PairHistory> = BTreeMap::new();
    let mut totals: HashMap<&str, usize> = HashMap::new();
    for t in &sorted {
        let e = pairs.entry((t.customer.as_str(), t.merchant.as_str())).or_default();
        e.0.push(t.step);
        e.1.push(t.amount);
        *totals.entry(t.customer.as_str()).or_default() += 1;
    }
    let stats: BTreeMap<(&str, &str), PairStats> = pairs
        .into_iter()
        .map(|(k, (steps, amounts))| {
            let gaps: Vec<f64> = steps.windows(2).map(|w| f64::from(w[1] - w[0])).collect();
            let (gap_mean, gap_std) = if gaps.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&gaps);
                (Some(m), Some(s))
            };
            let (amount_mean, amount_std) = mean_std(&amounts);
            (k, PairStats { gap_mean, gap_std, amount_mean, amount_std, count: steps.len() })
        })
        .collect();
    let observed: Vec<&PairStats> = stats.values().filter(|s| s.gap_mean.is_some()).collect();
    let impute = |f: fn(&PairStats) -> Option<f64>| {
        if observed.is_empty() {
            0.0
        } else {
            observed.iter().filter_map(|s| f(s)).sum::<f64>() / observed.len() as f64
        }
    };
    let (fill_mean, fill_std) = (impute(|s| s.gap_mean), impute(|s| s.gap_std));

    sorted
        .into_iter()
        .map(|t| {
            let s = &stats[&(t.customer.as_str(), t.merchant.as_str())];
            FeatureRow {
                step: t.step,
                customer: t.customer.clone(),
                merchant: t.merchant.clone(),
                amount: t.amount,
                fraud: t.fraud,
                x1: scale.apply(t.amount),
                x2: t.age.clone(),
                x3: t.gender.clone(),
                x4: t.category.clone(),
                x5: s.gap_mean.unwrap_or(fill_mean),
                x6: s.gap_std.unwrap_or(fill_std),
                x7: s.amount_mean,
                x8: s.amount_std,
                x9: s.count as f64 / totals[t.customer.as_str()] as f64,
                gap_imputed: s.gap_mean.is_none(),
            }
        })
        .collect()
}

/// Engineered-features CSV: the identifying columns, x1..x9, the imputation
/// flag and the fraud label.
pub fn features_csv(rows: &[FeatureRow]) -> String {
    let mut out = String::from("step,customer,merchant,amount,x1,x2,x3,x4,x5,x6,x7,x8,x9,gap_imputed,fraud\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{},{},{},{:?},{:?},{:?},{:?},{:?},{},{}\n",
            r.step,
            r.customer,
            r.merchant,
            r.amount,
            r.x1,
            r.x2,
            r.x3,
            r.x4,
            r.x5,
            r.x6,
            r.x7,
            r.x8,
            r.x9,
            u8::from(r.gap_imputed),
            u8::from(r.fraud)
        ));
    }
    out
}

/// Thresholds of the frequency proxy label on x9.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub rare_max: f64,
    pub infrequent_max: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { rare_max: 0.05, infrequent_max: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    /// Index into [`RISK_CLASSES`] per row.
    pub risk: Vec<usize>,
    /// Index into [`FREQUENCY_CLASSES`] per row.
    pub frequency: Vec<usize>,
    pub category_risk: BTreeMap<String, usize>,
    pub category_fraud_rate: BTreeMap<String, f64>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], f: f64) -> f64 {
    let pos = f * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Proxy labels. Risk: terciles of the per-category fraud rate, a category
/// is `high` above the upper tercile and `medium` above the lower one, so
/// ties fall to the lower class. Frequency: x9 against the thresholds.
pub fn derive_labels(rows: &[FeatureRow], cfg: &LabelConfig) -> Labels {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in rows {
        let e = tally.entry(r.x4.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(r.fraud);
    }
    let rates: BTreeMap<String, f64> = tally.iter().map(|(c, (n, f))| (c.to_string(), *f as f64 / *n as f64)).collect();
    let mut sorted: Vec<f64> = rates.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let (t1, t2) = if sorted.is_empty() { (0.0, 0.0) } else { (quantile(&sorted, 1.0 / 3.0), quantile(&sorted, 2.0 / 3.0)) };
    let category_risk: BTreeMap<String, usize> = rates
        .iter()
        .map(|(c, &r)| {
            let k = if r > t2 {
                2
            } else if r > t1 {
                1
            } else {
                0
            };
            (c.clone(), k)
        })
        .collect();
    let frequency = rows
        .iter()
        .map(|r| {
            if r.x9 <= cfg.rare_max {
                0
            } else if r.x9 <= cfg.infrequent_max {
                1
            } else {
                2
            }
        })
        .collect();
    Labels { risk: rows.iter().map(|r| category_risk[&r.x4]).collect(), frequency, category_risk, category_fraud_rate: rates }
}

/// Indices of every fraud row plus a uniform draw without replacement of
/// as many normal rows; ascending.
pub fn downsample_majority(rows: &[FeatureRow], seed: u64) -> Result<Vec<usize>, BankSimError> {
    let fraud = rows.iter().filter(|r| r.fraud).count();
    let normal = rows.len() - fraud;
    if fraud == 0 || normal == 0 {
        return Err(BankSimError::SingleClass { normal, fraud });
    }
    let labels: Vec<usize> = rows.iter().map(|r| usize::from(r.fraud)).collect();
    Ok(balanced_indices(&labels, seed))
}

fn observed_categorical(values: &[&str], order: &[&str], onehot: bool) -> DistSpec {
    let mut labels: Vec<String> = order.iter().filter(|l| values.contains(l)).map(|l| l.to_string()).collect();
    let mut extra: Vec<String> = values.iter().filter(|v| !order.contains(v)).map(|v| v.to_string()).collect();
    extra.sort();
    extra.dedup();
    labels.extend(extra);
    let probs: Vec<f64> = labels.iter().map(|l| values.iter().filter(|v| **v == l).count() as f64 / values.len() as f64).collect();
    if onehot {
        DistSpec::OneHotCategorical { probs, labels }
    } else {
        DistSpec::Categorical { probs, labels }
    }
}

/// Per-feature distributions: truncated normals on [0, 1] for x1 and x9,
/// gammas for x5..x8 (fitted to the strictly positive values, a zero std
/// being the single-transaction case), categoricals over the observed codes
/// for x2..x4.
pub fn fit_feature_distributions(rows: &[FeatureRow]) -> Result<BTreeMap<String, DistSpec>, BankSimError> {
    if rows.is_empty() {
        return Err(BankSimError::Empty);
    }
    let fit = |feature: &str, r: Result<DistSpec, DistError>| r.map_err(|source| BankSimError::Fit { feature: feature.to_owned(), source });
    let real = |f: fn(&FeatureRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let positive = |f: fn(&FeatureRow) -> f64| rows.iter().map(f).filter(|&x| x > 0.0).collect::<Vec<f64>>();
    let text = |f: fn(&FeatureRow) -> &str| rows.iter().map(f).collect::<Vec<&str>>();
    let mut out = BTreeMap::new();
    out.insert("x1".into(), fit("x1", dist::fit_truncated_normal(&real(|r| r.x1), 0.0, 1.0))?);
    out.insert("x2".into(), observed_categorical(&text(|r| &r.x2), &AGES, false));
    out.insert("x3".into(), observed_categorical(&text(|r| &r.x3), &GENDERS, false));
    out.insert("x4".into(), observed_categorical(&text(|r| &r.x4), &CATEGORIES, true));
    out.insert("x5".into(), fit("x5", dist::fit_gamma(&positive(|r| r.x5)))?);
    out.insert("x6".into(), fit("x6", dist::fit_gamma(&positive(|r| r.x6)))?);
    out.insert("x7".into(), fit("x7", dist::fit_gamma(&positive(|r| r.x7)))?);
    out.insert("x8".into(), fit("x8", dist::fit_gamma(&positive(|r| r.x8)))?);
    out.insert("x9".into(), fit("x9", dist::fit_truncated_normal(&real(|r| r.x9), 0.0, 1.0))?);
    Ok(out)
}

fn uniform(labels: &[&str], onehot: bool) -> DistSpec {
    let probs = vec![1.0 / labels.len() as f64; labels.len()];
    let labels = labels.iter().map(|l| l.to_string()).collect();
    if onehot {
        DistSpec::OneHotCategorical { probs, labels }
    } else {
        DistSpec::Categorical { probs, labels }
    }
}

/// The fraud hierarchy: m1 (business risk) reads amount and category, m2
/// (transaction frequency) reads x5..x9, and the decision model y reads both
/// models' probability outputs with x1..x3. Feature distributions are
/// placeholders until fitted.
pub fn network() -> Dag {
    let gamma = || DistSpec::Gamma { shape: 1.0, rate: 1.0 };
    let unit = || DistSpec::TruncatedNormal { mu: 0.5, sigma: 0.25, lo: 0.0, hi: 1.0 };
    let linear = |enc: Vec<Encoding>| ModelRef::new(Architecture::LinearSoftmax).with_encodings(enc);
    let mut y = linear(vec![Encoding::Proba, Encoding::Numeric, Encoding::OneHot, Encoding::OneHot, Encoding::Proba]);
    y.label = Some("fraud".into());
    let mut m1 = linear(vec![Encoding::Numeric, Encoding::OneHot]);
    m1.label = Some("risk".into());
    let mut m2 = linear(vec![Encoding::Numeric; 5]);
    m2.label = Some("frequency".into());
    let nodes = vec![
        Node::feature("x1", unit()),
        Node::feature("x2", uniform(&AGES, false)),
        Node::feature("x3", uniform(&GENDERS, false)),
        Node::feature("x4", uniform(&CATEGORIES, true)),
        Node::feature("x5", gamma()),
        Node::feature("x6", gamma()),
        Node::feature("x7", gamma()),
        Node::feature("x8", gamma()),
        Node::feature("x9", unit()),
        Node::model("m1", &["x1", "x4"], &RISK_CLASSES, m1),
        Node::model("m2", &["x5", "x6", "x7", "x8", "x9"], &FREQUENCY_CLASSES, m2),
        Node::model("y", &["m1", "x1", "x2", "x3", "m2"], &FRAUD_CLASSES, y),
    ];
    Dag::new(nodes, "y")
}

/// How raw transactions become training and evaluation tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub labels: LabelConfig,
    /// Share of rows held out for evaluation.
    pub eval_fraction: f64,
    /// Share of training rows that receive risk and frequency labels.
    pub label_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { labels: LabelConfig::default(), eval_fraction: 0.3, label_fraction: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub counts: ClassCounts,
    pub train_rows: usize,
    pub eval_rows: usize,
    /// Training rows carrying a fraud label after down-sampling.
    pub decision_rows: ClassCounts,
    pub labelled_rows: usize,
    pub scale: AmountScale,
    pub category_risk: BTreeMap<String, String>,
    pub config: PipelineConfig,
}

pub struct Prepared {
    pub train: Table,
    pub eval: Table,
    pub summary: PipelineSummary,
}

/// Columns of a feature/label table; empty label cells exclude the row from
/// that model's training.
fn to_table(rows: &[&FeatureRow], risk: &[Option<usize>], freq: &[Option<usize>], fraud: &[Option<bool>]) -> Table {
    let mut headers: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    headers.extend(["risk", "frequency", "fraud", "gap_imputed"].map(String::from));
    let real = |f: fn(&FeatureRow) -> f64| rows.iter().map(|r| format!("{:?}", f(r))).collect::<Vec<_>>();
    let text = |f: fn(&FeatureRow) -> &str| rows.iter().map(|r| f(r).to_owned()).collect::<Vec<_>>();
    let cols = vec![
        real(|r| r.x1),
        text(|r| &r.x2),
        text(|r| &r.x3),
        text(|r| &r.x4),
        real(|r| r.x5),
        real(|r| r.x6),
        real(|r| r.x7),
        real(|r| r.x8),
        real(|r| r.x9),
        risk.iter().map(|k| k.map_or(String::new(), |k| RISK_CLASSES[k].to_owned())).collect(),
        freq.iter().map(|k| k.map_or(String::new(), |k| FREQUENCY_CLASSES[k].to_owned())).collect(),
        fraud.iter().map(|f| f.map_or(String::new(), |f| FRAUD_CLASSES[usize::from(f)].to_owned())).collect(),
        rows.iter().map(|r| u8::from(r.gap_imputed).to_string()).collect(),
    ];
    Table::from_columns(headers, cols)
}

/// Engineers features, labels them, holds out an evaluation split and
/// down-samples normal rows for the decision model. Risk terciles come from
/// the training split only.
pub fn prepare(records: &[TxnRecord], cfg: &PipelineConfig, seed: u64) -> Result<Prepared, BankSimError> {
    if !(0.0..1.0).contains(&cfg.eval_fraction) || !(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0) {
        return Err(BankSimError::Config("eval_fraction must lie in [0, 1) and label_fraction in (0, 1]".into()));
    }
    if records.is_empty() {
        return Err(BankSimError::Empty);
    }
    let counts = class_counts(records);
    let scale = AmountScale::of(records);
    let rows = engineer_features_scaled(records, scale);

    let mut split = rng::stream(rng::derive_named(seed, "eval-split"));
    let held: Vec<bool> = rows.iter().map(|_| split.random::<f64>() < cfg.eval_fraction).collect();
    let train: Vec<&FeatureRow> = rows.iter().zip(&held).filter(|(_, h)| !**h).map(|(r, _)| r).collect();
    let eval: Vec<&FeatureRow> = rows.iter().zip(&held).filter(|(_, h)| **h).map(|(r, _)| r).collect();
    let owned: Vec<FeatureRow> = train.iter().map(|r| (*r).clone()).collect();
    let labels = derive_labels(&owned, &cfg.labels);

    let decision = downsample_majority(&owned, rng::derive_named(seed, "downsample"))?;
    let mut fraud_cells = vec![None; owned.len()];
    for &i in &decision {
        fraud_cells[i] = Some(owned[i].fraud);
    }
    let mut pick = rng::stream(rng::derive_named(seed, "label-subset"));
    let labelled: Vec<bool> = owned.iter().map(|_| pick.random::<f64>() < cfg.label_fraction).collect();
    let risk: Vec<Option<usize>> = labels.risk.iter().zip(&labelled).map(|(&k, &l)| l.then_some(k)).collect();
    let freq: Vec<Option<usize>> = labels.frequency.iter().zip(&labelled).map(|(&k, &l)| l.then_some(k)).collect();
    let train_table = to_table(&train, &risk, &freq, &fraud_cells);

    let eval_labels = derive_labels_with(&eval, &labels.category_risk, &cfg.labels);
    let eval_table = to_table(
        &eval,
        &eval_labels.0.into_iter().map(Some).collect::<Vec<_>>(),
        &eval_labels.1.into_iter().map(Some).collect::<Vec<_>>(),
        &eval.iter().map(|r| Some(r.fraud)).collect::<Vec<_>>(),
    );
    let decision_fraud = decision.iter().filter(|&&i| owned[i].fraud).count();
    Ok(Prepared {
        train: train_table,
        eval: eval_table,
        summary: PipelineSummary {
            counts,
            train_rows: train.len(),
            eval_rows: eval.len(),
            decision_rows: ClassCounts { normal: decision.len() - decision_fraud, fraud: decision_fraud },
            labelled_rows: labelled.iter().filter(|&&l| l).count(),
            scale,
            category_risk: labels.category_risk.iter().map(|(c, &k)| (c.clone(), RISK_CLASSES[k].to_owned())).collect(),
            config: cfg.clone(),
        },
    })
}

/// Risk from a fixed category map (unseen categories count as low) and
/// frequency from the thresholds.
fn derive_labels_with(rows: &[&FeatureRow], category_risk: &BTreeMap<String, usize>, cfg: &LabelConfig) -> (Vec<usize>, Vec<usize>) {
    let risk = rows.iter().map(|r| category_risk.get(&r.x4).copied().unwrap_or(0)).collect();
    let freq = rows.iter().map(|r| usize::from(r.x9 > cfg.rare_max) + usize::from(r.x9 > cfg.infrequent_max)).collect();
    (risk, freq)
}

/// Per-category fraud propensity and amount scale of the synthetic
/// generator; the risky categories mirror BankSim's.
const SYNTH_CATEGORIES: [(&str, f64, f64); 15] = [
    ("es_barsandrestaurants", 0.4, 45.0),
    ("es_contents", 0.0, 40.0),
    ("es_fashion", 0.5, 60.0),
    ("es_food", 0.0, 35.0),
    ("es_health", 2.0, 100.0),
    ("es_home", 3.0, 150.0),
    ("es_hotelservices", 4.0, 180.0),
    ("es_hyper", 0.8, 40.0),
    ("es_leisure", 8.0, 250.0),
    ("es_otherservices", 3.0, 130.0),
    ("es_sportsandtoys", 5.0, 200.0),
    ("es_tech", 2.5, 120.0),
    ("es_transportation", 0.0, 25.0),
    ("es_travel", 7.0, 400.0),
    ("es_wellnessandbeauty", 1.0, 60.0),
];

/// Category weights of a customer's main merchant and of everything else
/// they buy.
const SYNTH_MAIN: [f64; 15] = [0.5, 0.2, 0.5, 2.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 8.0, 0.5, 0.5];
const SYNTH_OTHER: [f64; 15] = [1.0, 0.3, 1.0, 1.5, 1.0, 0.6, 0.6, 1.0, 0.5, 0.6, 1.0, 0.6, 3.0, 0.5, 1.0];

const SYNTH_STEPS: u32 = 180;
const SYNTH_MERCHANTS_PER_CATEGORY: usize = 4;
const SYNTH_SECONDARY: usize = 5;
const SYNTH_FRAUDSTER_SHARE: f64 = 0.25;
const SYNTH_FRAUD_RATE: f64 = 0.08;

/// A seeded stand-in with BankSim's schema. Each customer has one main
/// merchant, a handful of occasional ones and some one-off purchases.
/// Fraud lands in risky categories: half of a victim's fraudulent payments
/// hit one of their occasional merchants, the rest one-off merchants.
pub fn synthetic(n_rows: usize, seed: u64) -> Vec<TxnRecord> {
    let mut g = rng::stream(seed);
    let n_cat = SYNTH_CATEGORIES.len();
    let name = |m: usize| format!("M{:04}", (m / SYNTH_MERCHANTS_PER_CATEGORY) * 100 + m % SYNTH_MERCHANTS_PER_CATEGORY);
    let normalise = |w: &[f64]| w.iter().map(|x| x / w.iter().sum::<f64>()).collect::<Vec<_>>();
    let (main_w, other_w) = (normalise(&SYNTH_MAIN), normalise(&SYNTH_OTHER));
    let risk_w = normalise(&SYNTH_CATEGORIES.iter().map(|c| c.1).collect::<Vec<_>>());
    let merchant_in = |g: &mut rng::Stream, w: &[f64]| dist::draw_index(g, w) * SYNTH_MERCHANTS_PER_CATEGORY + g.random_range(0..SYNTH_MERCHANTS_PER_CATEGORY);
    let amount = |g: &mut rng::Stream, mean: f64| GammaDist::new(3.0, mean / 3.0).expect("positive").sample(g);
    debug_assert_eq!(n_cat * SYNTH_MERCHANTS_PER_CATEGORY, SYNTH_MERCHANTS_PER_CATEGORY * SYNTH_MAIN.len());

    let mut out = Vec::with_capacity(n_rows);
    let mut c = 0usize;
    while out.len() < n_rows {
        let customer = format!("C{c:06}");
        c += 1;
        let age = AGES[dist::draw_index(&mut g, &normalise(&[0.03, 0.1, 0.3, 0.25, 0.18, 0.1, 0.03, 0.01]))];
        let gender = GENDERS[dist::draw_index(&mut g, &[0.01, 0.54, 0.44, 0.01])];
        let mut usual = vec![(merchant_in(&mut g, &main_w), g.random_range(2.0..3.0))];
        usual.extend((0..SYNTH_SECONDARY).map(|_| (merchant_in(&mut g, &other_w), g.random_range(0.6..1.0))));
        let victim = g.random::<f64>() < SYNTH_FRAUDSTER_SHARE;
        let compromised = merchant_in(&mut g, &risk_w);
        if victim {
            usual[1].0 = compromised;
        }
        let usual_w = normalise(&usual.iter().map(|u| u.1).collect::<Vec<_>>());
        let n_txn = (60 + g.random_range(0..80)).min(n_rows - out.len());
        for _ in 0..n_txn {
            let step = g.random_range(0..SYNTH_STEPS);
            let fraud = victim && g.random::<f64>() < SYNTH_FRAUD_RATE;
            let (m, amt) = if fraud {
                let m = if g.random::<f64>() < 0.5 { compromised } else { merchant_in(&mut g, &risk_w) };
                (m, amount(&mut g, SYNTH_CATEGORIES[m / SYNTH_MERCHANTS_PER_CATEGORY].2 * 1.3))
            } else {
                let m = if g.random::<f64>() < 0.9 { usual[dist::draw_index(&mut g, &usual_w)].0 } else { merchant_in(&mut g, &other_w) };
                (m, amount(&mut g, SYNTH_CATEGORIES[m / SYNTH_MERCHANTS_PER_CATEGORY].2))
            };
            out.push(TxnRecord {
                step,
                customer: customer.clone(),
                age: age.to_owned(),
                gender: gender.to_owned(),
                merchant: name(m),
                category: SYNTH_CATEGORIES[m / SYNTH_MERCHANTS_PER_CATEGORY].0.to_owned(),
                amount: (amt * 100.0).round() / 100.0,
                fraud,
            });
        }
    }
    out.sort_by(|a, b| a.step.cmp(&b.step).then_with(|| a.customer.cmp(&b.customer)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn txn(customer: &str, merchant: &str, step: u32, amount: f64) -> TxnRecord {
        TxnRecord {
            step,
            customer: customer.into(),
            age: "3".into(),
            gender: "F".into(),
            merchant: merchant.into(),
            category: "es_food".into(),
            amount,
            fraud: false,
        }
    }

    #[test]
    fn gaps_amounts_and_shares() {
        let mut rs = vec![txn("C1", "A", 1, 10.0), txn("C1", "A", 3, 20.0), txn("C1", "A", 7, 30.0)];
        rs.extend((0..7).map(|k| txn("C1", "B", 10 + k, 5.0)));
        let rows = engineer_features(&rs);
        let a = rows.iter().find(|r| r.merchant == "A").unwrap();
        assert_eq!((a.x5, a.x6), (3.0, 1.0));
        assert_eq!(a.x7, 20.0);
        assert!((a.x8 - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((a.x9 - 0.3).abs() < 1e-15);
        assert!(!a.gap_imputed);
    }

    #[test]
    fn single_transaction_pairs_are_imputed() {
        let rs = vec![txn("C1", "A", 1, 1.0), txn("C1", "A", 5, 2.0), txn("C2", "B", 2, 3.0), txn("C2", "B", 4, 4.0), txn("C2", "Z", 9, 5.0)];
        let rows = engineer_features(&rs);
        let z = rows.iter().find(|r| r.merchant == "Z").unwrap();
        assert!(z.gap_imputed);
        assert_eq!(z.x5, 3.0);
        assert_eq!(z.x6, 0.0);
        assert_eq!(z.x8, 0.0);
    }

    #[test]
    fn amount_scale_is_min_max() {
        let rs = vec![txn("C1", "A", 1, 10.0), txn("C1", "A", 2, 30.0), txn("C1", "A", 3, 20.0)];
        let x1: Vec<f64> = engineer_features(&rs).iter().map(|r| r.x1).collect();
        assert_eq!(x1, vec![0.0, 1.0, 0.5]);
        assert_eq!(AmountScale { min: 10.0, max: 30.0 }.apply(50.0), 1.0);
    }
}
