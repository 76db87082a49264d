//! Two-stage paired-question assessment of one trial per domain.
//!
//! Both questions travel in a single main-role completion: the evidence
//! question is answered as an internal step and only the structured
//! four-field answer is parsed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TrialDocument;
use crate::domain::{criteria_for, parse_label, seed_questions, RiskLabel, RobDomain};
use crate::gateway::{bounded_map, CompletionRequest, DecodeParams, Gateway, GatewayError, RoleTag};

pub const REQUIRED_FIELDS: [&str; 4] = ["reasoning", "risk_level", "justification", "confidence"];

const OUTPUT_CONTRACT: &str = "Answer with exactly four fields, one per line, in this form:\n\
reasoning: <step-by-step explanation of how the evidence was evaluated>\n\
risk_level: <Low, Unclear or High>\n\
justification: <brief narrative tying the evidence to the risk level>\n\
confidence: <decimal between 0 and 1>";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AssessmentError {
    #[error("malformed output: missing or empty {}", .0.join(", "))]
    MalformedOutput(Vec<&'static str>),
    #[error("unrecognized risk level {0:?}")]
    UnrecognizedLabel(String),
    #[error("confidence {0:?} is not a decimal number")]
    InvalidConfidence(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("trial {0:?} has an empty body")]
    EmptyTrial(String),
    #[error("domain {0} appears more than once in the prompt list")]
    DuplicateDomain(RobDomain),
    #[error("every domain failed for trial {0:?}")]
    AllDomainsFailed(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl AssessmentError {
    /// Errors that come from the model not following the output contract.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            AssessmentError::MalformedOutput(_)
                | AssessmentError::UnrecognizedLabel(_)
                | AssessmentError::InvalidConfidence(_)
                | AssessmentError::ConfidenceOutOfRange(_)
        )
    }
}

/// Instruction plus the paired questions for one domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainPrompt {
    pub domain: RobDomain,
    pub instruction: String,
    pub evidence_question: String,
    pub evaluative_question: String,
    pub version_id: String,
}

impl DomainPrompt {
    /// Starting prompt built from the bundled criteria and default questions.
    pub fn seed(domain: RobDomain) -> Self {
        let c = criteria_for(domain);
        let q = seed_questions(domain);
        let instruction = format!(
            "You assess risk of bias in randomized controlled trials using the Cochrane RoB 1 tool.\n\
             Domain: {name}.\n\
             Low risk: {low}\n\
             Unclear risk: {unclear}\n\
             High risk: {high}\n\
             First locate the passages that answer the evidence question, then use them to answer the evaluative question.",
            name = domain.canonical_name(),
            low = c.low,
            unclear = c.unclear,
            high = c.high,
        );
        Self {
            domain,
            instruction,
            evidence_question: q.evidence_question.clone(),
            evaluative_question: q.evaluative_question.clone(),
            version_id: format!("{domain}-seed"),
        }
    }
}

/// The four fields of a structured answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub reasoning: Option<String>,
    pub risk_level: RiskLabel,
    pub justification: String,
    pub confidence: f64,
}

fn field_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*]\s+)?[*_`]*\s*(reasoning|risk[_ ]level|justification|confidence)\s*[*_`]*\s*[:=]\s*(.*)$",
        )
        .expect("valid regex")
    })
}

fn canonical_key(raw: &str) -> &'static str {
    match raw.to_ascii_lowercase().replace(' ', "_").as_str() {
        "reasoning" => "reasoning",
        "risk_level" => "risk_level",
        "justification" => "justification",
        _ => "confidence",
    }
}

fn clean_value(raw: &str) -> String {
    let v = raw.trim().trim_end_matches(',').trim();
    let v = v.trim_start_matches("**").trim_end_matches("**").trim();
    if v.starts_with('"') {
        if let Ok(s) = serde_json::from_str::<String>(v) {
            return s.trim().to_string();
        }
    }
    let unquoted = if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    };
    unquoted.trim().to_string()
}

fn strip_fences(raw: &str) -> String {
    raw.lines().filter(|l| !l.trim_start().starts_with("```")).collect::<Vec<_>>().join("\n")
}

fn fields_from_json(text: &str) -> Option<BTreeMap<&'static str, String>> {
    let value: serde_json::Value = serde_json::from_str(text.trim()).ok()?;
    let obj = value.as_object()?;
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        let key = match k.to_ascii_lowercase().replace(' ', "_").as_str() {
            "reasoning" => "reasoning",
            "risk_level" => "risk_level",
            "justification" => "justification",
            "confidence" => "confidence",
            _ => continue,
        };
        let text = match v {
            serde_json::Value::String(s) => s.trim().to_string(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        };
        out.insert(key, text);
    }
    Some(out)
}

fn fields_from_lines(text: &str) -> BTreeMap<&'static str, String> {
    let mut out: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for line in text.lines() {
        if let Some(caps) = field_regex().captures(line) {
            let key = canonical_key(&caps[1]);
            if out.contains_key(key) {
                // keep the first occurrence; ignore continuation of a repeated key
                current = None;
                continue;
            }
            out.insert(key, caps[2].to_string());
            current = Some(key);
        } else if let Some(key) = current {
            let slot = out.get_mut(key).expect("current key present");
            if !line.trim().is_empty() {
                slot.push('\n');
                slot.push_str(line);
            }
        }
    }
    out.into_iter().map(|(k, v)| (k, clean_value(&v))).collect()
}

/// Parses the four-field answer. Field order is free; `key: value` lines,
/// fenced blocks and a bare JSON object are accepted. A missing reasoning
/// field is tolerated and reported as `None`.
pub fn parse_structured_output(raw: &str) -> Result<StructuredOutput, AssessmentError> {
    let body = strip_fences(raw);
    let fields = fields_from_json(&body).unwrap_or_else(|| fields_from_lines(&body));
    let get = |k: &str| fields.get(k).map(String::as_str).filter(|v| !v.is_empty());

    let missing: Vec<&'static str> = ["risk_level", "justification", "confidence"]
        .into_iter()
        .filter(|k| get(k).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(AssessmentError::MalformedOutput(missing));
    }
    let risk_raw = get("risk_level").expect("checked");
    let risk_level = parse_label(risk_raw).map_err(|_| AssessmentError::UnrecognizedLabel(risk_raw.to_string()))?;
    let conf_raw = get("confidence").expect("checked");
    let confidence: f64 = conf_raw
        .parse()
        .map_err(|_| AssessmentError::InvalidConfidence(conf_raw.to_string()))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(AssessmentError::ConfidenceOutOfRange(confidence));
    }
    Ok(StructuredOutput {
        reasoning: get("reasoning").map(str::to_string),
        risk_level,
        justification: get("justification").expect("checked").to_string(),
        confidence,
    })
}

/// Renders an answer in the line format accepted by [`parse_structured_output`].
pub fn render_structured_output(out: &StructuredOutput) -> String {
    let quote = |s: &str| serde_json::to_string(s).expect("string serializes");
    let mut text = String::new();
    if let Some(r) = &out.reasoning {
        let _ = writeln!(text, "reasoning: {}", quote(r));
    }
    let _ = writeln!(text, "risk_level: {}", out.risk_level.title());
    let _ = writeln!(text, "justification: {}", quote(&out.justification));
    let _ = write!(text, "confidence: {}", out.confidence);
    text
}

/// A parsed per-domain judgment with the raw model text kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainJudgment {
    pub domain: RobDomain,
    pub reasoning: String,
    pub risk_level: RiskLabel,
    pub justification: String,
    pub confidence: f64,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Assessment of one trial across the requested domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAssessment {
    pub trial_id: String,
    pub run_id: String,
    pub judgments: BTreeMap<RobDomain, DomainJudgment>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<RobDomain, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssessOptions {
    pub decode: DecodeParams,
    /// Trial bodies longer than this many characters keep only head and tail.
    pub char_cap: usize,
    /// Send one follow-up request when the answer breaks the output contract.
    pub repair: bool,
}

impl Default for AssessOptions {
    fn default() -> Self {
        Self { decode: DecodeParams::default(), char_cap: 200_000, repair: true }
    }
}

const TRUNCATION_MARKER: &str = "\n[... text omitted ...]\n";

/// Keeps the first and last `cap / 2` characters when `text` exceeds `cap` characters.
pub fn truncate_head_tail(text: &str, cap: usize) -> std::borrow::Cow<'_, str> {
    let len = text.chars().count();
    if len <= cap {
        return std::borrow::Cow::Borrowed(text);
    }
    let head = cap / 2;
    let tail = cap - head;
    let head_end = text.char_indices().nth(head).map_or(text.len(), |(i, _)| i);
    let tail_start = text.char_indices().nth(len - tail).map_or(text.len(), |(i, _)| i);
    std::borrow::Cow::Owned(format!("{}{}{}", &text[..head_end], TRUNCATION_MARKER, &text[tail_start..]))
}

fn compose(trial: &TrialDocument, prompt: &DomainPrompt, opts: &AssessOptions) -> (String, String) {
    let system = format!("{}\n\n{}", prompt.instruction.trim_end(), OUTPUT_CONTRACT);
    let body = truncate_head_tail(&trial.body, opts.char_cap);
    let user = format!(
        "Domain: {} ({})\n\
         Step 1, evidence identification: {}\n\
         Step 2, evaluation: {}\n\n\
         <trial>\n{}\n</trial>",
        prompt.domain.canonical_name(),
        prompt.domain,
        prompt.evidence_question,
        prompt.evaluative_question,
        body,
    );
    (system, user)
}

fn judgment_from(domain: RobDomain, parsed: StructuredOutput, raw_text: String) -> DomainJudgment {
    let mut warnings = Vec::new();
    let reasoning = parsed.reasoning.unwrap_or_else(|| {
        warnings.push("reasoning field missing".to_string());
        String::new()
    });
    DomainJudgment {
        domain,
        reasoning,
        risk_level: parsed.risk_level,
        justification: parsed.justification,
        confidence: parsed.confidence,
        raw_text,
        warnings,
    }
}

/// Assesses one domain of one trial with a single main-role completion,
/// plus at most one repair request when the answer is malformed.
pub fn assess_domain(
    trial: &TrialDocument,
    prompt: &DomainPrompt,
    gateway: &Gateway,
    opts: &AssessOptions,
) -> Result<DomainJudgment, AssessmentError> {
    if trial.body.trim().is_empty() {
        return Err(AssessmentError::EmptyTrial(trial.trial_id.clone()));
    }
    let (system, user) = compose(trial, prompt, opts);
    let request = CompletionRequest::new(RoleTag::Main, system, user)
        .with_decode(opts.decode)
        .with_group(trial.trial_id.clone());
    let first = gateway.complete(&request)?;
    let err = match parse_structured_output(&first.text) {
        Ok(parsed) => return Ok(judgment_from(prompt.domain, parsed, first.text)),
        Err(e) if opts.repair && e.is_contract_violation() => e,
        Err(e) => return Err(e),
    };
    log::debug!("trial {} {}: {err}; sending repair request", trial.trial_id, prompt.domain);
    let repair = CompletionRequest {
        user_text: format!(
            "{}\n\n<previous_answer>\n{}\n</previous_answer>\n\
             The previous answer did not follow the required format ({err}). \
             Answer again with exactly these four fields: {}.",
            request.user_text,
            first.text,
            REQUIRED_FIELDS.join(", "),
        ),
        ..request
    };
    let second = gateway.complete(&repair)?;
    let parsed = parse_structured_output(&second.text)?;
    let mut judgment = judgment_from(prompt.domain, parsed, second.text);
    judgment.warnings.push("parsed after repair request".into());
    Ok(judgment)
}

fn check_distinct(prompts: &[DomainPrompt]) -> Result<(), AssessmentError> {
    let mut seen = BTreeSet::new();
    for p in prompts {
        if !seen.insert(p.domain) {
            return Err(AssessmentError::DuplicateDomain(p.domain));
        }
    }
    Ok(())
}

fn assemble(
    trial_id: &str,
    run_id: &str,
    results: Vec<(RobDomain, Result<DomainJudgment, AssessmentError>)>,
) -> Result<TrialAssessment, AssessmentError> {
    let mut assessment = TrialAssessment {
        trial_id: trial_id.to_string(),
        run_id: run_id.to_string(),
        judgments: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for (domain, result) in results {
        match result {
            Ok(j) => {
                assessment.judgments.insert(domain, j);
            }
            Err(e) => {
                log::warn!("trial {trial_id} {domain}: {e}");
                assessment.failures.insert(domain, e.to_string());
            }
        }
    }
    if assessment.judgments.is_empty() {
        return Err(AssessmentError::AllDomainsFailed(trial_id.to_string()));
    }
    Ok(assessment)
}

/// Assesses every supplied domain of one trial. Failed domains are recorded
/// in `failures`; the call errors only when no domain succeeded.
pub fn assess_trial(
    trial: &TrialDocument,
    prompts: &[DomainPrompt],
    gateway: &Gateway,
    opts: &AssessOptions,
    run_id: &str,
) -> Result<TrialAssessment, AssessmentError> {
    check_distinct(prompts)?;
    let results = bounded_map(prompts, gateway.parallelism(), |_, p| (p.domain, assess_domain(trial, p, gateway, opts)));
    assemble(&trial.trial_id, run_id, results)
}

/// Assesses a corpus. Trials and domains share the gateway's parallelism
/// budget; outputs follow the input trial order.
pub fn assess_corpus(
    trials: &[TrialDocument],
    prompts: &[DomainPrompt],
    gateway: &Gateway,
    opts: &AssessOptions,
    run_id: &str,
) -> Result<Vec<Result<TrialAssessment, AssessmentError>>, AssessmentError> {
    check_distinct(prompts)?;
    let jobs: Vec<(usize, usize)> = (0..trials.len()).flat_map(|t| (0..prompts.len()).map(move |p| (t, p))).collect();
    let mut results = bounded_map(&jobs, gateway.parallelism(), |_, &(t, p)| {
        (prompts[p].domain, assess_domain(&trials[t], &prompts[p], gateway, opts))
    })
    .into_iter();
    Ok(trials
        .iter()
        .map(|trial| {
            let chunk: Vec<_> = results.by_ref().take(prompts.len()).collect();
            assemble(&trial.trial_id, run_id, chunk)
        })
        .collect())
}
