//! Subcommand implementations. Each returns a JSON summary for stdout and
//! whether any item failed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use robforge_core::assessment::{assess_corpus, AssessOptions, DomainPrompt, TrialAssessment};
use robforge_core::clock::LogicalClock;
use robforge_core::corpus::{build_split, load_corpus, load_examples, load_gold, sample_gold, GoldLabelSet, TrainingExample};
use robforge_core::evaluation::{
    aggregate_runs, disagreement_table, read_metrics_csv, write_metrics_csv, BootstrapConfig, EvalError, LabeledPair, Metric,
    MetricReport, MetricRow,
};
use robforge_core::gateway::{ChatBackend, CostLedger, Gateway, HttpBackend, HttpConfig, MockBackend, RetryPolicy, RoleTag};
use robforge_core::harmonize::{parse_external_ratings, ExternalScheme, LabelRecord};
use robforge_core::optimizer::{stability_protocol, OptimizerConfig, PromptArtifact};
use robforge_core::{RiskLabel, RobDomain};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ModelSpec, RunConfig};
use crate::error::CliError;
use crate::output::{expand_inputs, RunDir};

pub struct Outcome {
    pub summary: Value,
    pub partial: bool,
}

/// Shared context: resolved config, run directory and backend choice.
pub struct Context {
    pub config: RunConfig,
    pub run: RunDir,
    pub mock: Option<PathBuf>,
}

impl Context {
    fn backend(&self, spec: &ModelSpec) -> Result<Arc<dyn ChatBackend>, CliError> {
        if let Some(script) = &self.mock {
            let mock = MockBackend::from_file(spec.model.clone(), script).map_err(CliError::Config)?;
            return Ok(Arc::new(mock));
        }
        let base_url = spec
            .base_url
            .clone()
            .ok_or_else(|| CliError::Config(format!("model {} has no base_url and --mock was not given", spec.model)))?;
        let http = HttpBackend::from_env(HttpConfig { base_url, model: spec.model.clone(), timeout_secs: 120 })
            .map_err(CliError::Config)?;
        Ok(Arc::new(http))
    }

    /// Gateway for both roles; a logical clock and no retry delay under the mock.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let cfg = &self.config;
        let mut builder = Gateway::builder()
            .main(self.backend(&cfg.backends.main)?, cfg.price(&cfg.backends.main.model))
            .parallelism(cfg.parallelism);
        if let Some(r) = &cfg.backends.reflection {
            builder = builder.reflection(self.backend(r)?, cfg.price(&r.model));
        }
        if let Some(cap) = cfg.cost_cap_microusd {
            builder = builder.cost_cap_microusd(cap);
        }
        if self.mock.is_some() {
            builder = builder.clock(Arc::new(LogicalClock::new())).retry(RetryPolicy::no_delay());
        }
        Ok(builder.build())
    }

    fn write_ledger(&self, name: &str, ledger: &CostLedger) -> Result<(), CliError> {
        self.run.write_json(&format!("ledgers/{name}.json"), &LedgerSummary::from_ledger(ledger))?;
        Ok(())
    }

    fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig { n_resamples: self.config.bootstrap_resamples, seed: self.config.decode.seed, ..Default::default() }
    }
}

/// Order-independent ledger digest written next to each command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub main_calls: u64,
    pub reflection_calls: u64,
    pub main_prompt_tokens: u64,
    pub main_completion_tokens: u64,
    pub reflection_prompt_tokens: u64,
    pub reflection_completion_tokens: u64,
    pub main_microusd: u64,
    pub reflection_microusd: u64,
    pub main_usd: String,
    pub reflection_usd: String,
    pub wall_minutes: f64,
    /// Micro-dollars per group (trial id for assessment calls): [main, reflection].
    pub groups: BTreeMap<String, (u64, u64)>,
}

impl LedgerSummary {
    pub fn from_ledger(ledger: &CostLedger) -> Self {
        let main = ledger.totals(RoleTag::Main);
        let refl = ledger.totals(RoleTag::Reflection);
        let report = ledger.report();
        Self {
            main_calls: main.calls,
            reflection_calls: refl.calls,
            main_prompt_tokens: main.prompt_tokens,
            main_completion_tokens: main.completion_tokens,
            reflection_prompt_tokens: refl.prompt_tokens,
            reflection_completion_tokens: refl.completion_tokens,
            main_microusd: main.cost_microusd,
            reflection_microusd: refl.cost_microusd,
            main_usd: report.main_usd(),
            reflection_usd: report.reflection_usd(),
            wall_minutes: report.wall_minutes,
            groups: ledger.group_totals(),
        }
    }
}

// ---------------------------------------------------------------- optimize

pub fn optimize(ctx: &Context, domain: RobDomain) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let pool: Vec<TrainingExample> = match &cfg.paths.examples {
        Some(p) if p.exists() => load_examples(p)?.into_iter().filter(|e| e.domain == domain).collect(),
        Some(p) => {
            log::warn!("examples file {} does not exist", p.display());
            Vec::new()
        }
        None => Vec::new(),
    };
    let split = build_split(domain, &pool, cfg.decode.seed)?;
    let gateway = ctx.gateway()?;
    let config = OptimizerConfig {
        budget: cfg.budget()?,
        assess: AssessOptions { decode: cfg.decode.params(), ..Default::default() },
        reflection_decode: cfg.decode.params(),
        ..Default::default()
    };
    let ids = |xs: &[TrainingExample]| xs.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
    ctx.run.write_json(
        &format!("splits/{domain}.json"),
        &json!({"domain": domain, "seed": cfg.decode.seed, "train": ids(&split.train), "validation": ids(&split.validation)}),
    )?;

    let outcome = stability_protocol(&DomainPrompt::seed(domain), &split, &config, &gateway, cfg.decode.seed, cfg.n_runs);
    let mut runs = Vec::new();
    for r in &outcome.results {
        let artifact = PromptArtifact::from_result(r);
        ctx.run.write_json(&format!("prompts/{}.json", r.run_id), &artifact)?;
        ctx.run.write(&format!("traces/{}.trace.jsonl", r.run_id), r.trace.to_jsonl())?;
        runs.push(json!({
            "run_id": r.run_id,
            "status": "completed",
            "best_id": r.best.candidate_id,
            "best_validation_mean": r.best.mean_score(),
            "candidates": r.candidates.len(),
            "metric_calls": r.metric_calls_used,
        }));
    }
    for f in &outcome.failures {
        ctx.run.write(&format!("traces/{}.trace.jsonl", f.run_id), f.trace.to_jsonl())?;
        runs.push(json!({
            "run_id": f.run_id,
            "status": "failed",
            "error": f.error.to_string(),
            "metric_calls": f.metric_calls_used,
        }));
    }
    ctx.write_ledger(&format!("optimize-{domain}"), &gateway.ledger())?;
    let summary = json!({"command": "optimize", "domain": domain, "budget": config.budget, "runs": runs});
    ctx.run.write_json(&format!("optimize-{domain}.json"), &summary)?;
    // one successful run is enough; a run with no successes is a failure of every item
    Ok(Outcome { partial: outcome.results.is_empty(), summary })
}

// ---------------------------------------------------------------- assess

fn load_artifact(path: &Path) -> Result<PromptArtifact, CliError> {
    let corrupt = |reason: String| CliError::CorruptArtifact { path: path.display().to_string(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| corrupt(e.to_string()))?;
    let artifact: PromptArtifact = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if artifact.instruction.trim().is_empty() {
        return Err(corrupt("empty instruction".into()));
    }
    Ok(artifact)
}

/// Groups artifacts into prompt sets: set `j` takes the `j`-th artifact of each domain.
fn prompt_sets(artifacts: Vec<PromptArtifact>) -> Vec<Vec<DomainPrompt>> {
    let mut by_domain: BTreeMap<RobDomain, Vec<DomainPrompt>> = BTreeMap::new();
    for a in artifacts {
        by_domain.entry(a.domain).or_default().push(a.prompt());
    }
    let n = by_domain.values().map(Vec::len).max().unwrap_or(0);
    (0..n).map(|j| by_domain.values().filter_map(|ps| ps.get(j).cloned()).collect()).collect()
}

pub fn assess(ctx: &Context, prompts: &[PathBuf], trials: Option<&Path>, domains: &[RobDomain]) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let trials_path = trials
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.trials.clone())
        .ok_or_else(|| CliError::Usage("no trials given (--trials or paths.trials)".into()))?;
    let docs = load_corpus(&trials_path)?;

    let sets: Vec<(String, Vec<DomainPrompt>)> = if prompts.is_empty() {
        let ds = if domains.is_empty() { RobDomain::ALL.to_vec() } else { domains.to_vec() };
        vec![("seed".to_string(), ds.into_iter().map(DomainPrompt::seed).collect())]
    } else {
        let files = expand_inputs(prompts, "json")?;
        if files.is_empty() {
            return Err(CliError::Usage("no prompt artifacts found".into()));
        }
        let artifacts = files
            .iter()
            .map(|f| load_artifact(f))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|a| domains.is_empty() || domains.contains(&a.domain))
            .collect();
        prompt_sets(artifacts).into_iter().enumerate().map(|(j, set)| (format!("p{}", j + 1), set)).collect()
    };

    let gateway = ctx.gateway()?;
    let mut files = Vec::new();
    let mut failures = 0usize;
    let mut judgments = 0usize;
    for (set_name, set) in &sets {
        for k in 1..=cfg.n_evals {
            let run_id = format!("{set_name}-eval{k}");
            let opts = AssessOptions {
                decode: robforge_core::gateway::DecodeParams { seed: cfg.decode.seed + k as u64 - 1, ..cfg.decode.params() },
                ..Default::default()
            };
            let results = assess_corpus(&docs, set, &gateway, &opts, &run_id).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut text = String::new();
            for (doc, r) in docs.iter().zip(results) {
                match r {
                    Ok(a) => {
                        failures += a.failures.len();
                        judgments += a.judgments.len();
                        for (d, why) in &a.failures {
                            log::warn!("{run_id}: {} {d} failed: {why}", doc.trial_id);
                        }
                        text.push_str(&serde_json::to_string(&a).expect("assessments serialize"));
                        text.push('\n');
                    }
                    Err(e) => {
                        failures += set.len();
                        log::warn!("{run_id}: trial {} failed: {e}", doc.trial_id);
                    }
                }
            }
            let rel = format!("assessments/{run_id}.jsonl");
            ctx.run.write(&rel, text)?;
            files.push(rel);
        }
    }
    ctx.write_ledger("assess", &gateway.ledger())?;
    Ok(Outcome {
        partial: failures > 0,
        summary: json!({
            "command": "assess",
            "trials": docs.len(),
            "prompt_sets": sets.len(),
            "n_evals": cfg.n_evals,
            "files": files,
            "judgments": judgments,
            "failed_judgments": failures,
        }),
    })
}

// ---------------------------------------------------------------- evaluate

/// Predicted labels of one trial in one run, from assessment or harmonized records.
#[derive(Debug, Clone)]
struct Prediction {
    run_id: String,
    trial_id: String,
    labels: BTreeMap<RobDomain, RiskLabel>,
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| CliError::MalformedAssessment { path: path.display().to_string(), line: i + 1, reason };
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let p = if value.get("judgments").is_some() {
            let a: TrialAssessment = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            Prediction {
                run_id: a.run_id,
                trial_id: a.trial_id,
                labels: a.judgments.into_iter().map(|(d, j)| (d, j.risk_level)).collect(),
            }
        } else {
            let r: LabelRecord = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            Prediction { run_id: r.run_id, trial_id: r.trial_id, labels: r.labels }
        };
        out.push(p);
    }
    Ok(out)
}

fn load_gold_arg(ctx: &Context, gold: Option<&Path>) -> Result<Vec<GoldLabelSet>, CliError> {
    match gold.map(Path::to_path_buf).or_else(|| ctx.config.paths.gold.clone()) {
        Some(p) if p.as_os_str() == "sample" => Ok(sample_gold()),
        Some(p) => Ok(load_gold(&p)?),
        None => Err(CliError::Usage("no gold labels given (--gold or paths.gold)".into())),
    }
}

/// Pairs per run, restricted to (trial, domain) cells judged in every run so
/// that runs are comparable.
fn pairs_by_run(predictions: &[Prediction], gold: &BTreeMap<&str, &GoldLabelSet>) -> Result<BTreeMap<String, Vec<LabeledPair>>, CliError> {
    let mut cells: BTreeMap<String, BTreeSet<(String, RobDomain)>> = BTreeMap::new();
    for p in predictions {
        if !gold.contains_key(p.trial_id.as_str()) {
            return Err(EvalError::MissingGold(p.trial_id.clone()).into());
        }
        let run = cells.entry(p.run_id.clone()).or_default();
        run.extend(p.labels.keys().map(|d| (p.trial_id.clone(), *d)));
    }
    let common: BTreeSet<(String, RobDomain)> = cells
        .values()
        .cloned()
        .reduce(|a, b| a.intersection(&b).cloned().collect())
        .unwrap_or_default();
    let dropped: usize = cells.values().map(|c| c.len() - common.len()).sum();
    if dropped > 0 {
        log::warn!("{dropped} judgments excluded because they are missing from at least one run");
    }
    let mut out: BTreeMap<String, Vec<LabeledPair>> = BTreeMap::new();
    for p in predictions {
        for (d, label) in &p.labels {
            if common.contains(&(p.trial_id.clone(), *d)) {
                let g = gold[p.trial_id.as_str()].label(*d);
                out.entry(p.run_id.clone()).or_default().push(LabeledPair::new(p.trial_id.clone(), *d, g, *label));
            }
        }
    }
    for pairs in out.values_mut() {
        pairs.sort_by(|a, b| (a.domain, &a.trial_id).cmp(&(b.domain, &b.trial_id)));
    }
    Ok(out)
}

pub fn evaluate(ctx: &Context, assessments: &[PathBuf], gold: Option<&Path>) -> Result<Outcome, CliError> {
    let files = expand_inputs(assessments, "jsonl")?;
    if files.is_empty() {
        return Err(CliError::Usage("no assessment files given".into()));
    }
    let golds = load_gold_arg(ctx, gold)?;
    let gold_index: BTreeMap<&str, &GoldLabelSet> = golds.iter().map(|g| (g.trial_id.as_str(), g)).collect();
    let mut predictions = Vec::new();
    for f in &files {
        predictions.extend(read_predictions(f)?);
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput.into());
    }
    let runs = pairs_by_run(&predictions, &gold_index)?;
    let boot = ctx.bootstrap();
    let model_pair = ctx.config.model_pair();

    let mut rows: Vec<MetricRow> = Vec::new();
    let mut per_run = String::from("model_pair,run_id,domain,metric,value\n");
    let mut domains: BTreeSet<RobDomain> = BTreeSet::new();
    for pairs in runs.values() {
        domains.extend(pairs.iter().map(|p| p.domain));
    }
    let scopes: Vec<Option<RobDomain>> = domains.iter().copied().map(Some).chain([None]).collect();
    let mut summary_rows = Vec::new();
    for scope in scopes {
        let mut reports = Vec::new();
        for (run_id, pairs) in &runs {
            let subset: Vec<LabeledPair> = pairs.iter().filter(|p| scope.is_none_or(|d| p.domain == d)).cloned().collect();
            if subset.is_empty() {
                continue;
            }
            let report = MetricReport::compute(&subset, &boot)?;
            let scope_name = scope.map_or("all".to_string(), |d| d.code().to_string());
            for m in Metric::ALL {
                let v = report.get(m).point.map(|x| format!("{x:.6}")).unwrap_or_default();
                per_run.push_str(&format!("{model_pair},{run_id},{scope_name},{m},{v}\n"));
            }
            reports.push(report);
        }
        if reports.is_empty() {
            continue;
        }
        let mut agg = aggregate_runs(&reports, &boot)?;
        agg.domain = scope;
        summary_rows.push(json!({
            "domain": scope.map_or("all".to_string(), |d| d.code().to_string()),
            "n": agg.n,
            "runs": agg.runs,
            "correct_rate": agg.correct_rate.point,
            "kappa": agg.kappa.point,
        }));
        rows.extend(agg.rows(&model_pair));
    }
    let mut csv = Vec::new();
    write_metrics_csv(&rows, &mut csv)?;
    ctx.run.write("metrics.csv", csv)?;
    ctx.run.write("runs.csv", per_run)?;

    let all_pairs: Vec<LabeledPair> = runs.values().flatten().cloned().collect();
    let table = disagreement_table(&all_pairs);
    ctx.run.write("disagreements.jsonl", table.to_jsonl())?;
    let mut by_domain: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in &table.records {
        *by_domain
            .entry(r.pair.domain.code().to_string())
            .or_default()
            .entry(serde_json::to_value(r.direction).expect("direction serializes").as_str().unwrap_or_default().to_string())
            .or_default() += 1;
    }
    ctx.run.write_json("disagreement_summary.json", &json!({"overall": table.summary, "by_domain": by_domain}))?;
    Ok(Outcome {
        partial: false,
        summary: json!({
            "command": "evaluate",
            "model_pair": model_pair,
            "runs": runs.keys().collect::<Vec<_>>(),
            "metrics": summary_rows,
            "disagreements": table.summary,
        }),
    })
}

// ---------------------------------------------------------------- compare

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { (values[mid - 1] + values[mid]) / 2.0 })
}

/// Side-by-side table of one metric per domain, plus each system's median over domains.
pub fn compare_tables(systems: &[(String, Vec<MetricRow>)], metric: Metric) -> Result<String, CliError> {
    if systems.len() < 2 {
        return Err(CliError::SchemaMismatch(format!("need at least two metric files, got {}", systems.len())));
    }
    let mut out = String::from("domain");
    for (label, _) in systems {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let value = |rows: &[MetricRow], domain: &str| {
        rows.iter().find(|r| r.metric == metric && r.domain == domain).and_then(|r| r.point)
    };
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut per_system: Vec<Vec<f64>> = vec![Vec::new(); systems.len()];
    for d in RobDomain::ALL {
        let values: Vec<Option<f64>> = systems.iter().map(|(_, rows)| value(rows, d.code())).collect();
        if values.iter().all(Option::is_none) {
            continue;
        }
        out.push_str(d.code());
        for (i, v) in values.iter().enumerate() {
            out.push(',');
            out.push_str(&cell(*v));
            per_system[i].extend(*v);
        }
        out.push('\n');
    }
    out.push_str("median");
    for values in &mut per_system {
        out.push(',');
        out.push_str(&cell(median(values)));
    }
    out.push('\n');
    Ok(out)
}

pub fn compare(ctx: &Context, metrics: &[PathBuf], labels: &[String], metric: Metric) -> Result<Outcome, CliError> {
    if !labels.is_empty() && labels.len() != metrics.len() {
        return Err(CliError::Usage(format!("{} labels for {} metric files", labels.len(), metrics.len())));
    }
    let mut systems = Vec::new();
    for (i, path) in metrics.iter().enumerate() {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let rows = read_metrics_csv(file).map_err(|e| CliError::SchemaMismatch(format!("{}: {e}", path.display())))?;
        let label = labels.get(i).cloned().or_else(|| rows.first().map(|r| r.model_pair.clone())).unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        systems.push((label, rows));
    }
    let table = compare_tables(&systems, metric)?;
    ctx.run.write("comparison.csv", &table)?;
    Ok(Outcome {
        partial: false,
        summary: json!({"command": "compare", "metric": metric, "systems": systems.iter().map(|s| &s.0).collect::<Vec<_>>(), "table": table}),
    })
}

// ---------------------------------------------------------------- harmonize

pub fn harmonize(ctx: &Context, scheme: &str, ratings: &[PathBuf], label: Option<&str>) -> Result<Outcome, CliError> {
    let scheme = match ExternalScheme::bundled(scheme) {
        Some(s) => s,
        None => ExternalScheme::from_file(Path::new(scheme))?,
    };
    if ratings.is_empty() {
        return Err(CliError::Usage("no ratings files given".into()));
    }
    let mut failed = 0usize;
    let mut files = Vec::new();
    for (i, path) in ratings.iter().enumerate() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let run_id = match label {
            Some(l) if ratings.len() == 1 => l.to_string(),
            Some(l) => format!("{l}-{}", i + 1),
            None => format!("{}-{}", scheme.name, path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
        };
        let mut out = String::new();
        for r in parse_external_ratings(&text)? {
            match scheme.harmonize(&r) {
                Ok(labels) => {
                    let rec = LabelRecord { trial_id: r.trial_id, run_id: run_id.clone(), labels };
                    out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
                    out.push('\n');
                }
                Err(e) => {
                    failed += 1;
                    log::warn!("{run_id}: {e}");
                }
            }
        }
        let rel = format!("harmonized/{run_id}.jsonl");
        ctx.run.write(&rel, out)?;
        files.push(rel);
    }
    Ok(Outcome {
        partial: failed > 0,
        summary: json!({"command": "harmonize", "scheme": scheme.name, "domains": scheme.covered_domains(), "files": files, "failed_trials": failed}),
    })
}

// ---------------------------------------------------------------- report

pub fn report(ctx: &Context, ledgers: &[PathBuf]) -> Result<Outcome, CliError> {
    let files = expand_inputs(ledgers, "json")?;
    if files.is_empty() {
        return Err(CliError::Usage("no ledger files given".into()));
    }
    let mut costs = String::from("source,main_usd,reflection_usd,wall_minutes,main_calls,reflection_calls\n");
    let mut per_trial = String::from("source,group,main_usd,reflection_usd\n");
    let mut rows = Vec::new();
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let s: LedgerSummary = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
        let source = path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
        costs.push_str(&format!(
            "{source},{},{},{:.1},{},{}\n",
            s.main_usd, s.reflection_usd, s.wall_minutes, s.main_calls, s.reflection_calls
        ));
        for (group, (m, r)) in &s.groups {
            per_trial.push_str(&format!(
                "{source},{group},{},{}\n",
                robforge_core::gateway::render_usd(*m),
                robforge_core::gateway::render_usd(*r)
            ));
        }
        rows.push(json!({"source": source, "main_usd": s.main_usd, "reflection_usd": s.reflection_usd, "wall_minutes": format!("{:.1}", s.wall_minutes)}));
    }
    ctx.run.write("costs.csv", costs)?;
    ctx.run.write("costs_per_group.csv", per_trial)?;
    Ok(Outcome { partial: false, summary: json!({"command": "report", "ledgers": rows}) })
}
