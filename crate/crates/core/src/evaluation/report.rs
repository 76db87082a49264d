//! Per-domain metric reports, multi-run aggregation and the `metrics.csv` format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, BootstrapConfig};
use super::{ConfusionCounts, EvalError, LabeledPair, Metric};
use crate::domain::RobDomain;

/// Point estimate and interval for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub defined: bool,
    /// Runs in which the metric had a zero denominator.
    pub undefined_count: usize,
    /// Bootstrap resamples dropped because the metric was undefined.
    pub dropped_resamples: usize,
}

impl MetricEstimate {
    fn undefined(runs: usize) -> Self {
        Self { point: None, ci_low: None, ci_high: None, defined: false, undefined_count: runs, dropped_resamples: 0 }
    }
}

/// All six metrics for one domain (or all domains pooled) and one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` for the all-domain row.
    pub domain: Option<RobDomain>,
    /// Pairs per run.
    pub n: usize,
    pub runs: usize,
    pub correct_rate: MetricEstimate,
    pub sensitivity: MetricEstimate,
    pub specificity: MetricEstimate,
    pub ppv: MetricEstimate,
    pub npv: MetricEstimate,
    pub kappa: MetricEstimate,
    /// Underlying pairs of every run, kept so intervals can be recomputed on pooling.
    #[serde(skip)]
    pub pairs: Vec<LabeledPair>,
}

fn common_domain(pairs: &[LabeledPair]) -> Option<RobDomain> {
    let first = pairs.first()?.domain;
    pairs.iter().all(|p| p.domain == first).then_some(first)
}

/// Interval for `metric` over `pairs`, widened if needed so it contains `point`.
fn interval(pairs: &[LabeledPair], metric: Metric, point: f64, config: &BootstrapConfig) -> (Option<f64>, Option<f64>, usize) {
    match bootstrap_ci(pairs, |c| metric.compute::<f64>(c), config) {
        Ok(ci) => (Some(ci.low.min(point)), Some(ci.high.max(point)), ci.dropped),
        Err(_) => (None, None, config.n_resamples),
    }
}

impl MetricReport {
    /// Report for a single run. Pairs from several domains give the pooled row.
    pub fn compute(pairs: &[LabeledPair], config: &BootstrapConfig) -> Result<Self, EvalError> {
        if pairs.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let counts = ConfusionCounts::pooled(pairs);
        let estimate = |metric: Metric| match metric.compute::<f64>(&counts) {
            None => MetricEstimate::undefined(1),
            Some(point) => {
                let (ci_low, ci_high, dropped) = interval(pairs, metric, point, config);
                MetricEstimate { point: Some(point), ci_low, ci_high, defined: true, undefined_count: 0, dropped_resamples: dropped }
            }
        };
        Ok(Self {
            domain: common_domain(pairs),
            n: pairs.len(),
            runs: 1,
            correct_rate: estimate(Metric::CorrectRate),
            sensitivity: estimate(Metric::Sensitivity),
            specificity: estimate(Metric::Specificity),
            ppv: estimate(Metric::Ppv),
            npv: estimate(Metric::Npv),
            kappa: estimate(Metric::Kappa),
            pairs: pairs.to_vec(),
        })
    }

    pub fn get(&self, metric: Metric) -> &MetricEstimate {
        match metric {
            Metric::CorrectRate => &self.correct_rate,
            Metric::Sensitivity => &self.sensitivity,
            Metric::Specificity => &self.specificity,
            Metric::Ppv => &self.ppv,
            Metric::Npv => &self.npv,
            Metric::Kappa => &self.kappa,
        }
    }

    fn get_mut(&mut self, metric: Metric) -> &mut MetricEstimate {
        match metric {
            Metric::CorrectRate => &mut self.correct_rate,
            Metric::Sensitivity => &mut self.sensitivity,
            Metric::Specificity => &mut self.specificity,
            Metric::Ppv => &mut self.ppv,
            Metric::Npv => &mut self.npv,
            Metric::Kappa => &mut self.kappa,
        }
    }

    /// `metrics.csv` rows for this report.
    pub fn rows(&self, model_pair: &str) -> Vec<MetricRow> {
        Metric::ALL
            .into_iter()
            .map(|m| {
                let e = self.get(m);
                MetricRow {
                    model_pair: model_pair.to_string(),
                    domain: self.domain.map_or_else(|| "all".to_string(), |d| d.code().to_string()),
                    metric: m,
                    point: e.point,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                    n: self.n,
                    undefined_count: e.undefined_count,
                }
            })
            .collect()
    }
}

/// Averages point estimates over runs and recomputes intervals from the
/// pooled pairs, resampling trials so that all runs of a trial move together.
pub fn aggregate_runs(reports: &[MetricReport], config: &BootstrapConfig) -> Result<MetricReport, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyInput)?;
    if let Some(r) = reports.iter().find(|r| r.domain != first.domain) {
        return Err(EvalError::HeterogeneousReports(format!("domains {:?} and {:?}", first.domain, r.domain)));
    }
    if let Some(r) = reports.iter().find(|r| r.n != first.n) {
        return Err(EvalError::HeterogeneousReports(format!("n = {} and n = {}", first.n, r.n)));
    }
    let pooled: Vec<LabeledPair> = reports.iter().flat_map(|r| r.pairs.iter().cloned()).collect();
    let runs = reports.iter().map(|r| r.runs).sum();
    let mut out = MetricReport { runs, pairs: pooled, ..first.clone() };
    for metric in Metric::ALL {
        let points: Vec<f64> = reports.iter().filter_map(|r| r.get(metric).point).collect();
        let undefined_count = reports.iter().map(|r| r.get(metric).undefined_count).sum();
        let estimate = match average(&points) {
            None => MetricEstimate::undefined(undefined_count),
            Some(point) => {
                let (ci_low, ci_high, dropped) = if out.pairs.is_empty() {
                    (None, None, 0)
                } else {
                    interval(&out.pairs, metric, point, config)
                };
                MetricEstimate { point: Some(point), ci_low, ci_high, defined: true, undefined_count, dropped_resamples: dropped }
            }
        };
        *out.get_mut(metric) = estimate;
    }
    Ok(out)
}

/// Mean that returns the common value unchanged when all inputs are equal.
fn average(points: &[f64]) -> Option<f64> {
    let first = *points.first()?;
    if points.iter().all(|&p| p == first) {
        return Some(first);
    }
    Some(points.iter().sum::<f64>() / points.len() as f64)
}

/// Column order of `metrics.csv`.
pub const METRICS_CSV_HEADER: [&str; 8] =
    ["model_pair", "domain", "metric", "point", "ci_low", "ci_high", "n", "undefined_count"];

/// One `metrics.csv` line. Undefined values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model_pair: String,
    /// `D1`..`D7` or `all`.
    pub domain: String,
    pub metric: Metric,
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
    pub undefined_count: usize,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<(), EvalError> {
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.model_pair.clone(),
            r.domain.clone(),
            r.metric.to_string(),
            fmt_cell(r.point),
            fmt_cell(r.ci_low),
            fmt_cell(r.ci_high),
            r.n.to_string(),
            r.undefined_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricRow>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| EvalError::Csv(e.to_string()))?;
    if header.iter().ne(METRICS_CSV_HEADER) {
        return Err(EvalError::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let cell = |s: &str| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| EvalError::Csv(format!("not a number: {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| EvalError::Csv(e.to_string()))?;
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| EvalError::Csv(format!("not a count: {:?}", &rec[i])));
        rows.push(MetricRow {
            model_pair: rec[0].to_string(),
            domain: rec[1].to_string(),
            metric: Metric::parse(&rec[2]).ok_or_else(|| EvalError::Csv(format!("unknown metric {:?}", &rec[2])))?,
            point: cell(&rec[3])?,
            ci_low: cell(&rec[4])?,
            ci_high: cell(&rec[5])?,
            n: int(6)?,
            undefined_count: int(7)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RiskLabel::{self, *};

    fn run(preds: &[RiskLabel]) -> Vec<LabeledPair> {
        let golds = [Low, Low, Unclear, High, Low, High, Unclear, Low, Low, High];
        preds
            .iter()
            .zip(golds.iter().cycle())
            .enumerate()
            .map(|(i, (&p, &g))| LabeledPair::new(format!("T{i:02}"), RobDomain::D2, g, p))
            .collect()
    }

    fn config() -> BootstrapConfig {
        BootstrapConfig { n_resamples: 400, ..Default::default() }
    }

    #[test]
    fn identical_reports_aggregate_to_themselves() {
        let preds = [Low, High, Unclear, High, Low, Low, Low, Low, Unclear, High];
        let single = MetricReport::compute(&run(&preds), &config()).unwrap();
        let agg = aggregate_runs(&[single.clone(), single.clone(), single.clone()], &config()).unwrap();
        assert_eq!(agg.runs, 3);
        for m in Metric::ALL {
            assert_eq!(agg.get(m), single.get(m), "{m}");
        }
    }

    #[test]
    fn points_are_averaged() {
        let mut reports = Vec::new();
        for p in [0.5, 0.6, 0.7] {
            let mut r = MetricReport::compute(&run(&[Low; 10]), &config()).unwrap();
            r.correct_rate.point = Some(p);
            reports.push(r);
        }
        let agg = aggregate_runs(&reports, &config()).unwrap();
        assert!((agg.correct_rate.point.unwrap() - 0.6).abs() < 1e-12);
        let e = agg.correct_rate;
        assert!(e.ci_low.unwrap() <= e.point.unwrap() && e.point.unwrap() <= e.ci_high.unwrap());
    }

    #[test]
    fn heterogeneous_reports_rejected() {
        let a = MetricReport::compute(&run(&[Low; 10]), &config()).unwrap();
        let b = MetricReport::compute(&run(&[Low; 8]), &config()).unwrap();
        assert!(matches!(aggregate_runs(&[a, b], &config()), Err(EvalError::HeterogeneousReports(_))));
        assert_eq!(aggregate_runs(&[], &config()).unwrap_err(), EvalError::EmptyInput);
    }

    #[test]
    fn undefined_metric_counted_not_coerced() {
        let r = MetricReport::compute(&run(&[High; 10]), &config()).unwrap();
        assert!(!r.ppv.defined);
        assert_eq!(r.ppv.point, None);
        assert_eq!(r.ppv.undefined_count, 1);
        let agg = aggregate_runs(&[r.clone(), r], &config()).unwrap();
        assert_eq!(agg.ppv.undefined_count, 2);
    }

    #[test]
    fn csv_round_trip() {
        let r = MetricReport::compute(&run(&[Low, High, Unclear, High, Low, Low, Low, Low, High, High]), &config()).unwrap();
        let rows = r.rows("main+reflection");
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model_pair,domain,metric,point,ci_low,ci_high,n,undefined_count\n"));
        let back = read_metrics_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back[0].metric, Metric::CorrectRate);
        assert_eq!(back[0].domain, "D2");
        assert!((back[0].point.unwrap() - r.correct_rate.point.unwrap()).abs() < 1e-6);
        assert!(read_metrics_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
