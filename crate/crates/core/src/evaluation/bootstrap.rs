//! Percentile bootstrap with the trial as the resampling unit.
//!
//! Every resample draws trials with replacement and recomputes the statistic
//! from the summed per-trial confusion tables. Resample `i` uses its own
//! ChaCha stream derived from `(seed, i)`, so results do not depend on
//! thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConfusionCounts, EvalError, LabeledPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    /// Two-sided coverage in thousandths, e.g. 950.
    #[serde(default = "default_level")]
    pub level_permille: u32,
}

fn default_level() -> u32 {
    950
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: 2000, seed: 42, level_permille: 950 }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn alpha(&self) -> f64 {
        1.0 - self.level_permille as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    /// Resamples in which the statistic was undefined and therefore dropped.
    pub dropped: usize,
}

/// Sample quantile with linear interpolation between order statistics
/// (the usual "type 7" definition). `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-trial confusion tables in order of first appearance.
pub(crate) fn clusters(pairs: &[LabeledPair]) -> Vec<ConfusionCounts> {
    let mut tables: Vec<[[u64; 3]; 3]> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for p in pairs {
        let i = *index.entry(p.trial_id.as_str()).or_insert_with(|| {
            tables.push([[0; 3]; 3]);
            tables.len() - 1
        });
        tables[i][p.gold.index()][p.predicted.index()] += 1;
    }
    tables.into_iter().map(ConfusionCounts::from_matrix).collect()
}

/// Percentile interval for `statistic` over trial-level resamples.
pub fn bootstrap_ci<F>(pairs: &[LabeledPair], statistic: F, config: &BootstrapConfig) -> Result<Interval, EvalError>
where
    F: Fn(&ConfusionCounts) -> Option<f64> + Sync,
{
    if config.n_resamples < 100 {
        return Err(EvalError::TooFewResamples(config.n_resamples));
    }
    let units = clusters(pairs);
    if units.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let draws: Vec<Option<f64>> = (0..config.n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let mut full = [[0u64; 3]; 3];
            for _ in 0..units.len() {
                let unit = units[rng.gen_range(0..units.len())].full();
                for (g, row) in unit.iter().enumerate() {
                    for (p, n) in row.iter().enumerate() {
                        full[g][p] += n;
                    }
                }
            }
            statistic(&ConfusionCounts::from_matrix(full))
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let dropped = draws.len() - values.len();
    if values.is_empty() {
        return Err(EvalError::AllResamplesUndefined);
    }
    values.sort_by(f64::total_cmp);
    let alpha = config.alpha();
    Ok(Interval { low: percentile(&values, alpha / 2.0), high: percentile(&values, 1.0 - alpha / 2.0), dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{RiskLabel, RobDomain};
    use crate::evaluation::{correct_rate, ppv};

    fn pairs(matches: usize, total: usize) -> Vec<LabeledPair> {
        (0..total)
            .map(|i| {
                let pred = if i < matches { RiskLabel::Low } else { RiskLabel::High };
                LabeledPair::new(format!("T{i}"), RobDomain::D1, RiskLabel::Low, pred)
            })
            .collect()
    }

    #[test]
    fn type7_percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!((percentile(&v, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn degenerate_all_matching() {
        let ci = bootstrap_ci(&pairs(20, 20), correct_rate, &BootstrapConfig::default()).unwrap();
        assert_eq!((ci.low, ci.high, ci.dropped), (1.0, 1.0, 0));
    }

    #[test]
    fn same_seed_same_interval() {
        let ps = pairs(13, 20);
        let cfg = BootstrapConfig::with_seed(7);
        let a = bootstrap_ci(&ps, correct_rate, &cfg).unwrap();
        let b = bootstrap_ci(&ps, correct_rate, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.low < 0.65 && 0.65 < a.high);
    }

    #[test]
    fn undefined_everywhere_and_too_few() {
        let ps: Vec<LabeledPair> = (0..5)
            .map(|i| LabeledPair::new(format!("T{i}"), RobDomain::D6, RiskLabel::High, RiskLabel::High))
            .collect();
        assert_eq!(bootstrap_ci(&ps, ppv, &BootstrapConfig::default()).unwrap_err(), EvalError::AllResamplesUndefined);
        let cfg = BootstrapConfig { n_resamples: 50, ..Default::default() };
        assert_eq!(bootstrap_ci(&ps, correct_rate, &cfg).unwrap_err(), EvalError::TooFewResamples(50));
    }

    #[test]
    fn drop_count_reported() {
        // one low-predicted trial among many: ppv undefined when it is not drawn
        let mut ps = pairs(0, 30);
        ps[0].predicted = RiskLabel::Low;
        let ci = bootstrap_ci(&ps, ppv, &BootstrapConfig::default()).unwrap();
        assert!(ci.dropped > 0 && ci.dropped < 2000);
    }
}
