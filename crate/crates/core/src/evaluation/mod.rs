//! Agreement between model judgments and gold labels.
//!
//! Binary metrics treat `low` as the positive class and `unclear`/`high` as
//! negative. Rates with a zero denominator are `None`, never NaN.

pub mod bootstrap;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RiskLabel, RobDomain};
use crate::scalar::Scalar;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapConfig, Interval};
pub use report::{aggregate_runs, read_metrics_csv, write_metrics_csv, MetricEstimate, MetricReport, MetricRow, METRICS_CSV_HEADER};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("no labeled pairs")]
    EmptyInput,
    #[error("pairs span domains {0} and {1}")]
    MixedDomains(RobDomain, RobDomain),
    #[error("statistic undefined in every bootstrap resample")]
    AllResamplesUndefined,
    #[error("at least 100 bootstrap resamples are required, got {0}")]
    TooFewResamples(usize),
    #[error("reports cannot be aggregated: {0}")]
    HeterogeneousReports(String),
    #[error("trial {0:?} has no gold labels")]
    MissingGold(String),
    #[error("metrics file: {0}")]
    Csv(String),
}

/// One model judgment next to its gold label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub trial_id: String,
    pub domain: RobDomain,
    pub gold: RiskLabel,
    pub predicted: RiskLabel,
}

impl LabeledPair {
    pub fn new(trial_id: impl Into<String>, domain: RobDomain, gold: RiskLabel, predicted: RiskLabel) -> Self {
        Self { trial_id: trial_id.into(), domain, gold, predicted }
    }

    pub fn agrees(&self) -> bool {
        self.gold == self.predicted
    }
}

/// Low-vs-not-low counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binarized {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

/// 3×3 counts indexed `[gold][predicted]` in `low, unclear, high` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    full: [[u64; 3]; 3],
    binarized: Binarized,
}

impl ConfusionCounts {
    pub fn from_matrix(full: [[u64; 3]; 3]) -> Self {
        let low = RiskLabel::Low.index();
        let mut b = Binarized::default();
        for (g, row) in full.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                match (g == low, p == low) {
                    (true, true) => b.tp += n,
                    (true, false) => b.fn_ += n,
                    (false, true) => b.fp += n,
                    (false, false) => b.tn += n,
                }
            }
        }
        Self { full, binarized: b }
    }

    /// Counts pairs regardless of domain.
    pub fn pooled<'a>(pairs: impl IntoIterator<Item = &'a LabeledPair>) -> Self {
        let mut full = [[0u64; 3]; 3];
        for p in pairs {
            full[p.gold.index()][p.predicted.index()] += 1;
        }
        Self::from_matrix(full)
    }

    pub fn full(&self) -> &[[u64; 3]; 3] {
        &self.full
    }

    pub fn binarized(&self) -> Binarized {
        self.binarized
    }

    pub fn total(&self) -> u64 {
        self.full.iter().flatten().sum()
    }

    pub fn agreements(&self) -> u64 {
        (0..3).map(|i| self.full[i][i]).sum()
    }

    pub fn gold_marginals(&self) -> [u64; 3] {
        self.full.map(|row| row.iter().sum())
    }

    pub fn predicted_marginals(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for row in &self.full {
            for (o, n) in out.iter_mut().zip(row) {
                *o += n;
            }
        }
        out
    }

    /// Element-wise sum.
    pub fn merge(&self, other: &Self) -> Self {
        let mut full = self.full;
        for (g, row) in full.iter_mut().enumerate() {
            for (p, cell) in row.iter_mut().enumerate() {
                *cell += other.full[g][p];
            }
        }
        Self::from_matrix(full)
    }

    /// The binarized counts agree with the full matrix.
    pub fn is_consistent(&self) -> bool {
        let b = Self::from_matrix(self.full).binarized;
        b == self.binarized && b.tp + b.fn_ + b.fp + b.tn == self.total()
    }
}

/// Counts pairs from a single domain.
pub fn confusion(pairs: &[LabeledPair]) -> Result<ConfusionCounts, EvalError> {
    let first = pairs.first().ok_or(EvalError::EmptyInput)?;
    if let Some(other) = pairs.iter().find(|p| p.domain != first.domain) {
        return Err(EvalError::MixedDomains(first.domain, other.domain));
    }
    let counts = ConfusionCounts::pooled(pairs);
    debug_assert!(counts.is_consistent());
    Ok(counts)
}

fn rate<T: Scalar>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::ratio(num, den))
}

pub fn sensitivity<T: Scalar>(c: &ConfusionCounts) -> Option<T> {
    let b = c.binarized;
    rate(b.tp, b.tp + b.fn_)
}

pub fn specificity<T: Scalar>(c: &ConfusionCounts) -> Option<T> {
    let b = c.binarized;
    rate(b.tn, b.tn + b.fp)
}

pub fn ppv<T: Scalar>(c: &ConfusionCounts) -> Option<T> {
    let b = c.binarized;
    rate(b.tp, b.tp + b.fp)
}

pub fn npv<T: Scalar>(c: &ConfusionCounts) -> Option<T> {
    let b = c.binarized;
    rate(b.tn, b.tn + b.fn_)
}

/// Three-class accuracy; `None` only for an empty table.
pub fn correct_rate<T: Scalar>(c: &ConfusionCounts) -> Option<T> {
    rate(c.agreements(), c.total())
}

/// Cohen's κ over the 3×3 table; `None` only for an empty table.
///
/// Written as `(n·a − e) / (n² − e)` with `a` the agreement count and `e` the
/// sum of marginal products, so `po = pe` yields exactly zero. When chance
/// agreement is total (`e = n²`) κ is 1 for perfect agreement and 0 otherwise.
pub fn cohen_kappa<T: Scalar>(c: &ConfusionCounts) -> Option<T> {
    let n = c.total();
    if n == 0 {
        return None;
    }
    let expected: u64 = c.gold_marginals().iter().zip(c.predicted_marginals()).map(|(g, p)| g * p).sum();
    let observed = n * c.agreements();
    let n2 = n * n;
    if expected == n2 {
        return Some(if observed == n2 { T::one() } else { T::zero() });
    }
    let num = T::from_count(observed) - T::from_count(expected);
    Some(num / T::from_count(n2 - expected))
}

/// Correct rate straight from pairs.
pub fn correct_rate_of(pairs: &[LabeledPair]) -> Result<f64, EvalError> {
    correct_rate(&ConfusionCounts::pooled(pairs)).ok_or(EvalError::EmptyInput)
}

/// Cohen's κ straight from pairs.
pub fn cohen_kappa_of(pairs: &[LabeledPair]) -> Result<f64, EvalError> {
    cohen_kappa(&ConfusionCounts::pooled(pairs)).ok_or(EvalError::EmptyInput)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CorrectRate,
    Sensitivity,
    Specificity,
    Ppv,
    Npv,
    Kappa,
}

impl Metric {
    pub const ALL: [Metric; 6] =
        [Self::CorrectRate, Self::Sensitivity, Self::Specificity, Self::Ppv, Self::Npv, Self::Kappa];

    pub fn compute<T: Scalar>(self, c: &ConfusionCounts) -> Option<T> {
        match self {
            Self::CorrectRate => correct_rate(c),
            Self::Sensitivity => sensitivity(c),
            Self::Specificity => specificity(c),
            Self::Ppv => ppv(c),
            Self::Npv => npv(c),
            Self::Kappa => cohen_kappa(c),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CorrectRate => "correct_rate",
            Self::Sensitivity => "sensitivity",
            Self::Specificity => "specificity",
            Self::Ppv => "ppv",
            Self::Npv => "npv",
            Self::Kappa => "kappa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a non-matching judgment departs from the gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Gold low or high, model unclear.
    ConservativeDowngrade,
    /// Gold unclear, model low or high.
    Upgrade,
    /// Low and high swapped.
    PolarityFlip,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Self::ConservativeDowngrade, Self::Upgrade, Self::PolarityFlip];

    /// `None` for agreement.
    pub fn classify(gold: RiskLabel, predicted: RiskLabel) -> Option<Self> {
        use RiskLabel::*;
        match (gold, predicted) {
            _ if gold == predicted => None,
            (_, Unclear) => Some(Self::ConservativeDowngrade),
            (Unclear, _) => Some(Self::Upgrade),
            _ => Some(Self::PolarityFlip),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementRecord {
    #[serde(flatten)]
    pub pair: LabeledPair,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementTable {
    pub records: Vec<DisagreementRecord>,
    /// Count per direction; every direction is present.
    pub summary: BTreeMap<Direction, usize>,
}

impl DisagreementTable {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

pub fn disagreement_table(pairs: &[LabeledPair]) -> DisagreementTable {
    let mut summary: BTreeMap<Direction, usize> = Direction::ALL.into_iter().map(|d| (d, 0)).collect();
    let records = pairs
        .iter()
        .filter_map(|p| {
            let direction = Direction::classify(p.gold, p.predicted)?;
            *summary.entry(direction).or_default() += 1;
            Some(DisagreementRecord { pair: p.clone(), direction })
        })
        .collect();
    DisagreementTable { records, summary }
}

#[cfg(test)]
mod tests {
    use num_rational::Ratio;

    use super::*;
    use RiskLabel::*;

    fn pairs(spec: &[(RiskLabel, RiskLabel, usize)]) -> Vec<LabeledPair> {
        let mut out = Vec::new();
        for &(g, p, n) in spec {
            for _ in 0..n {
                out.push(LabeledPair::new(format!("T{}", out.len()), RobDomain::D1, g, p));
            }
        }
        out
    }

    #[test]
    fn all_low_low() {
        let c = confusion(&pairs(&[(Low, Low, 10)])).unwrap();
        assert_eq!(c.full()[0][0], 10);
        assert_eq!(c.binarized(), Binarized { tp: 10, fn_: 0, fp: 0, tn: 0 });
    }

    #[test]
    fn hand_counted_binarization() {
        let c = confusion(&pairs(&[(Low, Low, 8), (Low, Unclear, 2), (High, High, 3), (Unclear, Low, 1)])).unwrap();
        assert_eq!(c.binarized(), Binarized { tp: 8, fn_: 2, fp: 1, tn: 3 });
        assert_eq!(sensitivity::<f64>(&c), Some(0.8));
        assert!(c.is_consistent());
    }

    #[test]
    fn mixed_domains_and_empty() {
        let mut ps = pairs(&[(Low, Low, 2)]);
        ps[1].domain = RobDomain::D2;
        assert_eq!(confusion(&ps).unwrap_err(), EvalError::MixedDomains(RobDomain::D1, RobDomain::D2));
        assert_eq!(confusion(&[]).unwrap_err(), EvalError::EmptyInput);
    }

    #[test]
    fn undefined_rates() {
        let c = confusion(&pairs(&[(High, High, 3)])).unwrap();
        assert_eq!(ppv::<f64>(&c), None);
        assert_eq!(sensitivity::<f64>(&c), None);
        let c = confusion(&pairs(&[(Low, Low, 3), (High, High, 1)])).unwrap();
        assert_eq!(ppv::<f64>(&c), Some(1.0));
    }

    #[test]
    fn correct_rate_examples() {
        assert_eq!(correct_rate_of(&pairs(&[(Low, Low, 4)])).unwrap(), 1.0);
        assert_eq!(correct_rate_of(&pairs(&[(Low, Low, 1), (High, Low, 3)])).unwrap(), 0.25);
        assert_eq!(correct_rate_of(&[]).unwrap_err(), EvalError::EmptyInput);
    }

    #[test]
    fn kappa_examples() {
        let perfect = ConfusionCounts::from_matrix([[3, 0, 0], [0, 2, 0], [0, 0, 0]]);
        assert_eq!(cohen_kappa::<f64>(&perfect), Some(1.0));
        // D6 distribution with a constant-low predictor
        let d6 = ConfusionCounts::from_matrix([[89, 0, 0], [11, 0, 0], [0, 0, 0]]);
        assert_eq!(correct_rate::<f64>(&d6), Some(0.89));
        assert_eq!(cohen_kappa::<f64>(&d6), Some(0.0));
        // hand computation: po = 11/15, pe = 75/225 = 1/3, κ = (11/15 - 1/3) / (2/3) = 3/5
        let t = ConfusionCounts::from_matrix([[4, 1, 0], [1, 3, 1], [0, 1, 4]]);
        assert_eq!(cohen_kappa::<Ratio<i64>>(&t), Some(Ratio::new(3, 5)));
        // single class on both sides: chance agreement is total
        let degenerate = ConfusionCounts::from_matrix([[5, 0, 0], [0, 0, 0], [0, 0, 0]]);
        assert_eq!(cohen_kappa::<f64>(&degenerate), Some(1.0));
    }

    #[test]
    fn disagreement_directions() {
        assert_eq!(Direction::classify(Low, Unclear), Some(Direction::ConservativeDowngrade));
        assert_eq!(Direction::classify(High, Unclear), Some(Direction::ConservativeDowngrade));
        assert_eq!(Direction::classify(Unclear, Low), Some(Direction::Upgrade));
        assert_eq!(Direction::classify(Low, High), Some(Direction::PolarityFlip));
        assert_eq!(Direction::classify(High, High), None);
        let ps = pairs(&[(Low, Low, 2), (Low, Unclear, 3), (Unclear, High, 1), (High, Low, 1)]);
        let t = disagreement_table(&ps);
        assert_eq!(t.records.len(), 5);
        assert_eq!(t.summary[&Direction::ConservativeDowngrade], 3);
        let line = t.to_jsonl();
        assert!(line.lines().next().unwrap().contains("\"direction\":\"conservative_downgrade\""));
    }
}
