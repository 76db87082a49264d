//! Reflective genetic-Pareto search over domain instructions.
//!
//! One run scores the seed prompt on the validation set, then repeatedly
//! samples a parent from the per-instance Pareto front, evaluates it on a
//! small training minibatch, asks the reflection model to rewrite the
//! instruction from the failures, and scores the child on the validation
//! set. Every scored example is one metric call; the run stops when the
//! metric-call cap is reached.

pub mod pareto;
pub mod trace;

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::assessment::{assess_domain, AssessOptions, AssessmentError, DomainPrompt};
use crate::corpus::{CorpusError, DatasetSplit, TrainingExample, TrialDocument};
use crate::domain::RiskLabel;
use crate::gateway::{bounded_map, extract_block, CompletionRequest, DecodeParams, Gateway, GatewayError, RoleTag};
use crate::scalar::mean;

pub use pareto::{dominates, Front, FrontUpdate, Member, ParetoError};
pub use trace::{EventKind, ExecutionTrace, TraceError, TraceEvent, TraceReplay};

/// Metric-call cap of the light preset.
pub const LIGHT_METRIC_CALLS: usize = 428;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptimizeError {
    #[error("metric-call budget of {cap} exhausted")]
    BudgetExceeded { cap: usize },
    #[error("budget of {cap} metric calls cannot score the seed on {needed} validation examples")]
    BudgetTooSmall { cap: usize, needed: usize },
    #[error("validation set is empty")]
    EmptyValset,
    #[error("reflection returned an empty instruction twice")]
    EmptyReflection,
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl From<CorpusError> for OptimizeError {
    fn from(e: CorpusError) -> Self {
        OptimizeError::InvalidSplit(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetPreset {
    Light,
    Medium,
    Heavy,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationBudget {
    pub metric_call_cap: usize,
    pub preset: BudgetPreset,
}

impl OptimizationBudget {
    pub fn light() -> Self {
        Self { metric_call_cap: LIGHT_METRIC_CALLS, preset: BudgetPreset::Light }
    }

    pub fn medium() -> Self {
        Self { metric_call_cap: 2 * LIGHT_METRIC_CALLS, preset: BudgetPreset::Medium }
    }

    pub fn heavy() -> Self {
        Self { metric_call_cap: 4 * LIGHT_METRIC_CALLS, preset: BudgetPreset::Heavy }
    }

    pub fn cap(n: usize) -> Self {
        Self { metric_call_cap: n, preset: BudgetPreset::Custom }
    }

    /// Parses `light`, `medium`, `heavy` or `cap=N`.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "light" => Some(Self::light()),
            "medium" => Some(Self::medium()),
            "heavy" => Some(Self::heavy()),
            other => other.strip_prefix("cap=")?.parse().ok().map(Self::cap),
        }
    }
}

/// Running count of metric calls against a cap, with per-call records.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBudget {
    cap: usize,
    used: usize,
    ticks: Vec<MetricTick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTick {
    pub candidate_id: String,
    pub example_id: String,
    pub score: Option<f64>,
}

impl MetricBudget {
    pub fn new(cap: usize) -> Self {
        Self { cap, used: 0, ticks: Vec::new() }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.cap - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used >= self.cap
    }

    fn drain_ticks(&mut self) -> Vec<MetricTick> {
        std::mem::take(&mut self.ticks)
    }
}

/// Outcome of one metric call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub example_id: String,
    pub score: f64,
    pub predicted: Option<RiskLabel>,
    pub model_output: String,
    pub feedback: String,
}

/// Exact-match metric with textual feedback derived from the annotation.
pub fn evaluate_example(
    prompt: &DomainPrompt,
    example: &TrainingExample,
    gateway: &Gateway,
    opts: &AssessOptions,
) -> Result<ExampleOutcome, GatewayError> {
    let trial = TrialDocument::new(example.id.clone(), example.excerpt.clone());
    let task = DomainPrompt {
        evidence_question: example.evidence_question.clone(),
        evaluative_question: example.evaluative_question.clone(),
        ..prompt.clone()
    };
    match assess_domain(&trial, &task, gateway, opts) {
        Ok(j) => {
            let hit = j.risk_level == example.label;
            let feedback = if hit {
                format!("Correct: {} matches the annotated label.", j.risk_level)
            } else {
                format!(
                    "Incorrect: predicted {} but the annotated label is {}. Annotated evidence: \"{}\". Reference justification: {}",
                    j.risk_level, example.label, example.evidence_span, example.justification
                )
            };
            Ok(ExampleOutcome {
                example_id: example.id.clone(),
                score: if hit { 1.0 } else { 0.0 },
                predicted: Some(j.risk_level),
                model_output: j.raw_text,
                feedback,
            })
        }
        Err(AssessmentError::Gateway(e)) => Err(e),
        Err(e) => Ok(ExampleOutcome {
            example_id: example.id.clone(),
            score: 0.0,
            predicted: None,
            model_output: String::new(),
            feedback: format!(
                "The answer could not be used ({e}). The annotated label is {}. Reference justification: {}",
                example.label, example.justification
            ),
        }),
    }
}

/// Scores a prompt on `examples`, one metric call each.
///
/// Calls fan out up to the gateway's parallelism. When the remaining budget
/// is smaller than the set, the affordable prefix is still evaluated and
/// counted, then `BudgetExceeded` is returned and the partial vector is
/// discarded.
pub fn score_candidate(
    candidate_id: &str,
    prompt: &DomainPrompt,
    examples: &[TrainingExample],
    gateway: &Gateway,
    opts: &AssessOptions,
    budget: &mut MetricBudget,
) -> Result<Vec<ExampleOutcome>, OptimizeError> {
    if examples.is_empty() {
        return Err(OptimizeError::EmptyValset);
    }
    let affordable = budget.remaining().min(examples.len());
    let results = bounded_map(&examples[..affordable], gateway.parallelism(), |_, ex| {
        evaluate_example(prompt, ex, gateway, opts)
    });
    budget.used += affordable;
    let mut outcomes = Vec::with_capacity(affordable);
    let mut first_error = None;
    for (ex, result) in examples.iter().zip(results) {
        let score = result.as_ref().ok().map(|o| o.score);
        budget.ticks.push(MetricTick { candidate_id: candidate_id.to_string(), example_id: ex.id.clone(), score });
        match result {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e.into());
    }
    if affordable < examples.len() {
        return Err(OptimizeError::BudgetExceeded { cap: budget.cap });
    }
    Ok(outcomes)
}

/// An instruction candidate and its validation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub candidate_id: String,
    pub parent_id: Option<String>,
    pub generation: u32,
    pub prompt: DomainPrompt,
    pub scores: Option<Vec<f64>>,
}

impl PromptCandidate {
    pub fn mean_score(&self) -> Option<f64> {
        self.scores.as_deref().and_then(mean)
    }
}

/// Offers a scored candidate to the front.
pub fn pareto_update(front: &Front<f64>, candidate: &PromptCandidate) -> Result<Front<f64>, ParetoError> {
    let scores = candidate
        .scores
        .clone()
        .ok_or_else(|| ParetoError::UnscoredCandidate(candidate.candidate_id.clone()))?;
    let mut next = front.clone();
    next.insert(candidate.candidate_id.clone(), scores)?;
    Ok(next)
}

/// A training example the parent got wrong, with its feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureCase<'a> {
    pub example: &'a TrainingExample,
    pub outcome: ExampleOutcome,
}

const REFLECTION_SYSTEM: &str = "You improve instructions for a language model that assesses risk of bias in randomized \
controlled trials under the Cochrane RoB 1 tool. Read the current instruction and the cases it handled badly, \
work out what guidance was missing or misleading, and write a complete replacement instruction. \
Reply with the new instruction text only.";

fn reflection_prompt(parent: &PromptCandidate, failures: &[FailureCase<'_>]) -> String {
    let domain = parent.prompt.domain;
    let mut user = format!(
        "Domain: {} ({domain})\n\n<current_instruction>\n{}\n</current_instruction>\n\n<failed_cases>\n",
        domain.canonical_name(),
        parent.prompt.instruction.trim(),
    );
    if failures.is_empty() {
        user.push_str(
            "No failing cases were observed on the sampled examples. Refine the instruction for clarity and robustness without changing its intent.\n",
        );
    }
    for (i, f) in failures.iter().enumerate() {
        let ex = f.example;
        let _ = write!(
            user,
            "Case {n} ({id})\nExcerpt: {excerpt}\nEvidence question: {eq}\nAnnotated evidence: {span}\nEvaluative question: {vq}\n\
             Model answer: {answer}\nFeedback: {feedback}\n\n",
            n = i + 1,
            id = ex.id,
            excerpt = ex.excerpt.trim(),
            eq = ex.evidence_question,
            span = ex.evidence_span,
            vq = ex.evaluative_question,
            answer = if f.outcome.model_output.is_empty() { "(unusable)" } else { f.outcome.model_output.trim() },
            feedback = f.outcome.feedback,
        );
    }
    user.push_str("</failed_cases>\n\nWrite the improved instruction.");
    user
}

fn clean_reflection(text: &str) -> String {
    if let Some(inner) = extract_block(text, "new_instruction") {
        return inner.to_string();
    }
    let lines: Vec<&str> = text.trim().lines().collect();
    let body = match (lines.first(), lines.last()) {
        (Some(first), Some(last)) if lines.len() >= 2 && first.trim_start().starts_with("```") && last.trim() == "```" => {
            lines[1..lines.len() - 1].join("\n")
        }
        _ => text.to_string(),
    };
    body.trim().to_string()
}

/// Asks the reflection model for a rewritten instruction. The child keeps
/// the parent's paired questions and starts unscored.
pub fn reflect_mutate(
    parent: &PromptCandidate,
    failures: &[FailureCase<'_>],
    gateway: &Gateway,
    decode: DecodeParams,
    child_id: &str,
    version_id: &str,
) -> Result<PromptCandidate, OptimizeError> {
    let request = CompletionRequest::new(RoleTag::Reflection, REFLECTION_SYSTEM, reflection_prompt(parent, failures))
        .with_decode(decode);
    let mut instruction = String::new();
    for _ in 0..2 {
        instruction = clean_reflection(&gateway.complete(&request)?.text);
        if !instruction.is_empty() {
            break;
        }
    }
    if instruction.is_empty() {
        return Err(OptimizeError::EmptyReflection);
    }
    Ok(PromptCandidate {
        candidate_id: child_id.to_string(),
        parent_id: Some(parent.candidate_id.clone()),
        generation: parent.generation + 1,
        prompt: DomainPrompt { instruction, version_id: version_id.to_string(), ..parent.prompt.clone() },
        scores: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub budget: OptimizationBudget,
    /// Training examples evaluated per generation to find failures for reflection.
    pub reflection_batch: usize,
    pub assess: AssessOptions,
    pub reflection_decode: DecodeParams,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            budget: OptimizationBudget::light(),
            reflection_batch: 4,
            assess: AssessOptions::default(),
            reflection_decode: DecodeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub run_id: String,
    pub rng_seed: u64,
    pub best: PromptCandidate,
    pub front: Front<f64>,
    pub candidates: Vec<PromptCandidate>,
    pub trace: ExecutionTrace,
    pub metric_calls_used: usize,
}

impl OptimizationResult {
    /// Candidate ids from the seed to `id`.
    pub fn lineage(&self, id: &str) -> Vec<&PromptCandidate> {
        let mut chain = Vec::new();
        let mut cursor = self.candidates.iter().find(|c| c.candidate_id == id);
        while let Some(c) = cursor {
            chain.push(c);
            cursor = c.parent_id.as_ref().and_then(|p| self.candidates.iter().find(|x| &x.candidate_id == p));
        }
        chain.reverse();
        chain
    }
}

/// A run that stopped on an error; the trace ends with a failed `finished` event.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationFailure {
    pub run_id: String,
    pub rng_seed: u64,
    pub error: OptimizeError,
    pub trace: ExecutionTrace,
    pub metric_calls_used: usize,
}

struct Run<'a> {
    gateway: &'a Gateway,
    config: &'a OptimizerConfig,
    split: &'a DatasetSplit,
    run_id: String,
    rng_seed: u64,
    rng: ChaCha8Rng,
    budget: MetricBudget,
    trace: ExecutionTrace,
    candidates: Vec<PromptCandidate>,
    front: Front<f64>,
}

impl<'a> Run<'a> {
    fn emit(&mut self, kind: EventKind, payload: serde_json::Value) -> Result<(), OptimizeError> {
        let now = self.gateway.clock().now_ms();
        self.trace.push(kind, now, payload)?;
        Ok(())
    }

    fn flush_ticks(&mut self) -> Result<(), OptimizeError> {
        for tick in self.budget.drain_ticks() {
            let call = self.trace.count(EventKind::BudgetTick) + 1;
            self.emit(
                EventKind::BudgetTick,
                json!({"call": call, "candidate_id": tick.candidate_id, "example_id": tick.example_id, "score": tick.score}),
            )?;
        }
        Ok(())
    }

    fn next_id(&self) -> String {
        format!("c{:04}", self.candidates.len())
    }

    fn version_id(&self, candidate_id: &str) -> String {
        format!("{}/{candidate_id}", self.run_id)
    }

    /// Scores `examples`; ticks are flushed to the trace whatever the outcome.
    fn score(&mut self, id: &str, prompt: &DomainPrompt, examples: &[TrainingExample]) -> Result<Vec<ExampleOutcome>, OptimizeError> {
        let result = score_candidate(id, prompt, examples, self.gateway, &self.config.assess, &mut self.budget);
        self.flush_ticks()?;
        result
    }

    fn score_on_validation(&mut self, idx: usize) -> Result<(), OptimizeError> {
        let id = self.candidates[idx].candidate_id.clone();
        let prompt = self.candidates[idx].prompt.clone();
        let outcomes = self.score(&id, &prompt, &self.split.validation)?;
        let scores: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
        self.emit(EventKind::Scored, json!({"candidate_id": id, "split": "validation", "scores": scores, "mean": mean(&scores)}))?;
        self.candidates[idx].scores = Some(scores);
        let next = pareto_update(&self.front, &self.candidates[idx])?;
        let update = {
            let before: Vec<String> = self.front.members().iter().map(|m| m.id.clone()).collect();
            let admitted = next.contains(&id);
            let evicted: Vec<String> = before.into_iter().filter(|b| !next.contains(b)).collect();
            FrontUpdate { admitted, evicted }
        };
        self.front = next;
        let members: Vec<&str> = self.front.members().iter().map(|m| m.id.as_str()).collect();
        self.emit(
            EventKind::FrontUpdated,
            json!({
                "candidate_id": id,
                "admitted": update.admitted,
                "evicted": update.evicted,
                "members": members,
                "per_instance_best": self.front.per_instance_best(),
            }),
        )
    }

    fn generation(&mut self) -> Result<(), OptimizeError> {
        let parent_id = self.front.select_parent(&mut self.rng)?.id.clone();
        let parent = self.candidates.iter().find(|c| c.candidate_id == parent_id).cloned().expect("front members are known candidates");
        let wins = self.front.wins(parent.scores.as_deref().unwrap_or_default());
        self.emit(EventKind::ParentSelected, json!({"candidate_id": parent_id, "wins": wins, "front_size": self.front.len()}))?;

        let train = &self.split.train;
        let batch_size = self.config.reflection_batch.min(train.len());
        let mut picks = sample(&mut self.rng, train.len(), batch_size).into_vec();
        picks.sort_unstable();
        let batch: Vec<TrainingExample> = picks.iter().map(|&i| train[i].clone()).collect();
        let outcomes = self.score(&parent_id, &parent.prompt, &batch)?;
        let failures: Vec<FailureCase<'_>> = batch
            .iter()
            .zip(outcomes)
            .filter(|(_, o)| o.score < 1.0)
            .map(|(example, outcome)| FailureCase { example, outcome })
            .collect();
        let failure_ids: Vec<&str> = failures.iter().map(|f| f.example.id.as_str()).collect();

        let child_id = self.next_id();
        let version = self.version_id(&child_id);
        let child = reflect_mutate(&parent, &failures, self.gateway, self.config.reflection_decode, &child_id, &version)?;
        let batch_ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
        self.emit(
            EventKind::Reflected,
            json!({"parent_id": parent_id, "minibatch": batch_ids, "failures": failure_ids}),
        )?;
        self.emit(
            EventKind::ChildProposed,
            json!({
                "candidate_id": child.candidate_id,
                "parent_id": parent_id,
                "generation": child.generation,
                "instruction": child.prompt.instruction,
            }),
        )?;
        self.candidates.push(child);
        let idx = self.candidates.len() - 1;
        self.score_on_validation(idx)
    }

    fn best(&self) -> Option<&PromptCandidate> {
        // ids are zero-padded in creation order, so the first maximum is the earliest
        let mut best: Option<(&PromptCandidate, f64)> = None;
        for c in &self.candidates {
            if let Some(m) = c.mean_score() {
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((c, m));
                }
            }
        }
        best.map(|(c, _)| c)
    }
}

/// Runs one optimization from `seed_prompt` under the configured budget.
pub fn optimize(
    seed_prompt: &DomainPrompt,
    split: &DatasetSplit,
    config: &OptimizerConfig,
    gateway: &Gateway,
    rng_seed: u64,
) -> Result<OptimizationResult, OptimizationFailure> {
    let run_id = format!("{}-s{rng_seed}", split.domain);
    let mut run = Run {
        gateway,
        config,
        split,
        run_id: run_id.clone(),
        rng_seed,
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        budget: MetricBudget::new(config.budget.metric_call_cap),
        trace: ExecutionTrace::new(run_id.clone()),
        candidates: Vec::new(),
        front: Front::new(),
    };
    let outcome = drive(&mut run, seed_prompt);
    let used = run.budget.used();
    let best = run.best().cloned();
    let (status, error) = match (&outcome, &best) {
        (Ok(()), Some(_)) => ("completed", None),
        (Ok(()), None) => (
            "failed",
            Some(OptimizeError::BudgetTooSmall { cap: config.budget.metric_call_cap, needed: split.validation.len() }),
        ),
        (Err(e), _) => ("failed", Some(e.clone())),
    };
    let finish = json!({
        "status": status,
        "best_id": best.as_ref().map(|b| b.candidate_id.clone()),
        "best_mean": best.as_ref().and_then(PromptCandidate::mean_score),
        "metric_calls_used": used,
        "metric_call_cap": config.budget.metric_call_cap,
        "candidates": run.candidates.len(),
        "error": error.as_ref().map(ToString::to_string),
    });
    // the trace cannot already be finished here
    let _ = run.emit(EventKind::Finished, finish);
    match (error, best) {
        (None, Some(best)) => Ok(OptimizationResult {
            run_id,
            rng_seed,
            best,
            front: run.front,
            candidates: run.candidates,
            trace: run.trace,
            metric_calls_used: used,
        }),
        (error, _) => Err(OptimizationFailure {
            run_id,
            rng_seed,
            error: error.expect("failure status carries an error"),
            trace: run.trace,
            metric_calls_used: used,
        }),
    }
}

fn drive(run: &mut Run<'_>, seed_prompt: &DomainPrompt) -> Result<(), OptimizeError> {
    run.split.validate()?;
    let seed_id = run.next_id();
    let seed = PromptCandidate {
        candidate_id: seed_id.clone(),
        parent_id: None,
        generation: 0,
        prompt: DomainPrompt { version_id: run.version_id(&seed_id), ..seed_prompt.clone() },
        scores: None,
    };
    let train_ids: Vec<&str> = run.split.train.iter().map(|e| e.id.as_str()).collect();
    let val_ids: Vec<&str> = run.split.validation.iter().map(|e| e.id.as_str()).collect();
    let payload = json!({
        "candidate_id": seed_id,
        "generation": 0,
        "domain": run.split.domain,
        "instruction": seed.prompt.instruction,
        "rng_seed": run.rng_seed,
        "metric_call_cap": run.budget.cap(),
        "train": train_ids,
        "validation": val_ids,
    });
    run.emit(EventKind::Seeded, payload)?;
    run.candidates.push(seed);
    match run.score_on_validation(0) {
        Err(OptimizeError::BudgetExceeded { .. }) => return Ok(()),
        other => other?,
    }
    while !run.budget.is_exhausted() {
        match run.generation() {
            Err(OptimizeError::BudgetExceeded { .. }) => break,
            other => other?,
        }
    }
    Ok(())
}

/// Outcome of repeated runs with consecutive seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityOutcome {
    pub results: Vec<OptimizationResult>,
    pub failures: Vec<OptimizationFailure>,
}

/// Runs `n_runs` optimizations with seeds `base_seed, base_seed + 1, ...`.
pub fn stability_protocol(
    seed_prompt: &DomainPrompt,
    split: &DatasetSplit,
    config: &OptimizerConfig,
    gateway: &Gateway,
    base_seed: u64,
    n_runs: usize,
) -> StabilityOutcome {
    let mut outcome = StabilityOutcome { results: Vec::new(), failures: Vec::new() };
    for i in 0..n_runs as u64 {
        match optimize(seed_prompt, split, config, gateway, base_seed + i) {
            Ok(r) => outcome.results.push(r),
            Err(f) => {
                log::warn!("run {} failed: {}", f.run_id, f.error);
                outcome.failures.push(f);
            }
        }
    }
    outcome
}

/// Serialized form of an optimized prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptArtifact {
    pub domain: crate::domain::RobDomain,
    pub instruction: String,
    pub evidence_question: String,
    pub evaluative_question: String,
    pub version_id: String,
    /// Version ids from the seed to this prompt.
    pub lineage: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_mean: Option<f64>,
}

impl PromptArtifact {
    pub fn from_result(result: &OptimizationResult) -> Self {
        let best = &result.best;
        Self {
            domain: best.prompt.domain,
            instruction: best.prompt.instruction.clone(),
            evidence_question: best.prompt.evidence_question.clone(),
            evaluative_question: best.prompt.evaluative_question.clone(),
            version_id: best.prompt.version_id.clone(),
            lineage: result.lineage(&best.candidate_id).iter().map(|c| c.prompt.version_id.clone()).collect(),
            validation_mean: best.mean_score(),
        }
    }

    pub fn prompt(&self) -> DomainPrompt {
        DomainPrompt {
            domain: self.domain,
            instruction: self.instruction.clone(),
            evidence_question: self.evidence_question.clone(),
            evaluative_question: self.evaluative_question.clone(),
            version_id: self.version_id.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::clock::LogicalClock;
    use crate::corpus::build_split;
    use crate::domain::RobDomain;
    use crate::gateway::{FnBackend, MockBackend, MockRule, Price, RawCompletion};

    fn example(i: usize, label: RiskLabel) -> TrainingExample {
        TrainingExample {
            id: format!("ex{i:02}"),
            domain: RobDomain::D2,
            excerpt: format!("Case {i}. [[gold:{label}]]"),
            evidence_question: "Extract the concealment sentence.".into(),
            evidence_span: format!("Case {i}."),
            evaluative_question: "Was allocation concealed?".into(),
            label,
            justification: format!("Annotated as {label}."),
        }
    }

    fn answer(label: &str) -> String {
        format!("reasoning: r\nrisk_level: {label}\njustification: j\nconfidence: 0.5")
    }

    fn constant_gateway(label: &'static str) -> Gateway {
        Gateway::builder()
            .main(Arc::new(MockBackend::new("m", vec![MockRule::new("*", answer(label))])), Price::default())
            .reflection(Arc::new(MockBackend::new("r", vec![MockRule::new("*", "{{block:current_instruction}} Always cite the exact sentence.")])), Price::default())
            .clock(Arc::new(LogicalClock::new()))
            .build()
    }

    fn valset() -> Vec<TrainingExample> {
        (0..12).map(|i| example(i, RiskLabel::ALL[i % 3])).collect()
    }

    #[test]
    fn constant_unclear_scores_one_third() {
        let gw = constant_gateway("Unclear");
        let mut budget = MetricBudget::new(100);
        let out = score_candidate("c", &DomainPrompt::seed(RobDomain::D2), &valset(), &gw, &AssessOptions::default(), &mut budget).unwrap();
        let scores: Vec<f64> = out.iter().map(|o| o.score).collect();
        assert_eq!(mean(&scores), Some(4.0 / 12.0));
        assert_eq!(budget.used(), 12);
        assert!(out.iter().filter(|o| o.score == 0.0).all(|o| o.feedback.contains("annotated label is")));
    }

    #[test]
    fn budget_exceeded_after_cap_calls() {
        let gw = constant_gateway("Low");
        let mut budget = MetricBudget::new(5);
        let err = score_candidate("c", &DomainPrompt::seed(RobDomain::D2), &valset(), &gw, &AssessOptions::default(), &mut budget).unwrap_err();
        assert_eq!(err, OptimizeError::BudgetExceeded { cap: 5 });
        assert_eq!(budget.used(), 5);
        assert_eq!(gw.ledger().entries().len(), 5);
        assert_eq!(budget.ticks.len(), 5);
    }

    #[test]
    fn reflection_appends_sentence() {
        let gw = constant_gateway("Low");
        let parent = PromptCandidate {
            candidate_id: "c0000".into(),
            parent_id: None,
            generation: 0,
            prompt: DomainPrompt { instruction: "Judge concealment.".into(), ..DomainPrompt::seed(RobDomain::D2) },
            scores: Some(vec![1.0]),
        };
        let child = reflect_mutate(&parent, &[], &gw, DecodeParams::default(), "c0001", "v1").unwrap();
        assert_eq!(child.prompt.instruction, "Judge concealment. Always cite the exact sentence.");
        assert_eq!(child.generation, 1);
        assert_eq!(child.parent_id.as_deref(), Some("c0000"));
        assert_eq!(child.prompt.evaluative_question, parent.prompt.evaluative_question);
        assert_eq!(child.scores, None);
    }

    #[test]
    fn blank_reflection_twice_is_error() {
        let gw = Gateway::builder()
            .main(Arc::new(MockBackend::new("m", vec![])), Price::default())
            .reflection(Arc::new(MockBackend::new("r", vec![MockRule::new("*", "  \n ")])), Price::default())
            .build();
        let parent = PromptCandidate {
            candidate_id: "c0000".into(),
            parent_id: None,
            generation: 0,
            prompt: DomainPrompt::seed(RobDomain::D2),
            scores: None,
        };
        let err = reflect_mutate(&parent, &[], &gw, DecodeParams::default(), "c1", "v").unwrap_err();
        assert_eq!(err, OptimizeError::EmptyReflection);
        assert_eq!(gw.ledger().totals(RoleTag::Reflection).calls, 2);
    }

    #[test]
    fn clean_reflection_strips_wrappers() {
        assert_eq!(clean_reflection("```\nNew text\n```"), "New text");
        assert_eq!(clean_reflection("Here: <new_instruction>\nX\n</new_instruction>"), "X");
        assert_eq!(clean_reflection("  plain  "), "plain");
    }

    #[test]
    fn unscored_candidate_rejected_by_front() {
        let c = PromptCandidate {
            candidate_id: "c".into(),
            parent_id: None,
            generation: 0,
            prompt: DomainPrompt::seed(RobDomain::D1),
            scores: None,
        };
        assert_eq!(pareto_update(&Front::new(), &c).unwrap_err(), ParetoError::UnscoredCandidate("c".into()));
    }

    fn pool() -> Vec<TrainingExample> {
        (0..30).map(|i| example(i, RiskLabel::ALL[i % 3])).collect()
    }

    fn magic_gateway() -> Gateway {
        let main = FnBackend::new("main", |r: &CompletionRequest| {
            let gold = r.user_text.split("[[gold:").nth(1).and_then(|s| s.split("]]").next()).unwrap_or("unclear").to_string();
            let label = if r.system_text.contains("MAGIC") { gold } else if gold == "high" { "low".into() } else { "high".into() };
            Ok(RawCompletion::text(answer(&label)))
        });
        let reflection = MockBackend::new("refl", vec![MockRule::new("*", "{{block:current_instruction}} MAGIC")]);
        Gateway::builder()
            .main(Arc::new(main), Price::new(1, 1))
            .reflection(Arc::new(reflection), Price::new(1, 1))
            .clock(Arc::new(LogicalClock::new()))
            .parallelism(4)
            .build()
    }

    #[test]
    fn light_run_uses_exactly_the_budget() {
        let split = build_split(RobDomain::D2, &pool(), 42).unwrap();
        let gw = magic_gateway();
        let result = optimize(&DomainPrompt::seed(RobDomain::D2), &split, &OptimizerConfig::default(), &gw, 42).unwrap();
        assert_eq!(result.metric_calls_used, LIGHT_METRIC_CALLS);
        assert_eq!(result.trace.count(EventKind::BudgetTick), LIGHT_METRIC_CALLS);
        assert_eq!(result.best.mean_score(), Some(1.0));
        assert_eq!(result.best.generation, 1);
        assert!(result.trace.is_finished());
        assert_eq!(result.trace.count(EventKind::Finished), 1);
    }

    #[test]
    fn small_cap_cannot_score_seed() {
        let split = build_split(RobDomain::D2, &pool(), 42).unwrap();
        let config = OptimizerConfig { budget: OptimizationBudget::cap(5), ..Default::default() };
        let failure = optimize(&DomainPrompt::seed(RobDomain::D2), &split, &config, &magic_gateway(), 1).unwrap_err();
        assert_eq!(failure.error, OptimizeError::BudgetTooSmall { cap: 5, needed: 12 });
        assert_eq!(failure.trace.count(EventKind::BudgetTick), 5);
        assert!(failure.trace.is_finished());
    }

    #[test]
    fn budget_parse() {
        assert_eq!(OptimizationBudget::parse("light").unwrap().metric_call_cap, 428);
        assert_eq!(OptimizationBudget::parse("cap=17").unwrap(), OptimizationBudget::cap(17));
        assert_eq!(OptimizationBudget::parse("cap=x"), None);
        assert_eq!(OptimizationBudget::parse("huge"), None);
    }
}
