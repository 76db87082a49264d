//! Trial documents, gold labels and the per-domain training/validation data.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{parse_label, RiskLabel, RobDomain};

/// Training examples per label in a split.
pub const TRAIN_PER_LABEL: usize = 6;
/// Validation examples per label in a split.
pub const VALIDATION_PER_LABEL: usize = 4;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("duplicate trial id {0:?}")]
    DuplicateTrialId(String),
    #[error("trial {0:?} has an empty body")]
    EmptyBody(String),
    #[error("malformed record {record}: {reason}")]
    MalformedRecord { record: String, reason: String },
    #[error("gold record for {trial_id:?} is missing {domain}")]
    MissingDomain { trial_id: String, domain: RobDomain },
    #[error("gold record for {trial_id:?}: unrecognized label {label:?}")]
    UnrecognizedLabel { trial_id: String, label: String },
    #[error("insufficient {label} examples: have {have}, need {need}")]
    InsufficientExamples { label: RiskLabel, have: usize, need: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// A full-text trial report, already converted to plain text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDocument {
    pub trial_id: String,
    pub body: String,
    #[serde(default, rename = "meta", skip_serializing_if = "Option::is_none")]
    pub source_meta: Option<BTreeMap<String, serde_json::Value>>,
}

impl TrialDocument {
    pub fn new(trial_id: impl Into<String>, body: impl Into<String>) -> Self {
        Self { trial_id: trial_id.into(), body: body.into(), source_meta: None }
    }
}

fn validate_documents(mut docs: Vec<TrialDocument>) -> Result<Vec<TrialDocument>, CorpusError> {
    let mut seen = HashSet::new();
    for doc in &docs {
        if doc.trial_id.trim().is_empty() {
            return Err(CorpusError::MalformedRecord { record: doc.trial_id.clone(), reason: "empty trial_id".into() });
        }
        if !seen.insert(doc.trial_id.clone()) {
            return Err(CorpusError::DuplicateTrialId(doc.trial_id.clone()));
        }
        if doc.body.trim().is_empty() {
            return Err(CorpusError::EmptyBody(doc.trial_id.clone()));
        }
    }
    docs.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(docs)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            record: format!("{}:{}", path.display(), idx + 1),
            reason: e.to_string(),
        })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

/// Loads trials from a directory of `.txt` files (id = file stem) or a JSONL manifest.
///
/// Documents come back sorted by `trial_id`.
pub fn load_corpus(path: &Path) -> Result<Vec<TrialDocument>, CorpusError> {
    let docs = if path.is_dir() {
        let mut docs = Vec::new();
        for entry in fs::read_dir(path).map_err(io_err(path))? {
            let entry = entry.map_err(io_err(path))?;
            let file = entry.path();
            if !file.is_file() || file.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = file.file_stem().and_then(|s| s.to_str()).ok_or_else(|| CorpusError::MalformedRecord {
                record: file.display().to_string(),
                reason: "file name is not valid UTF-8".into(),
            })?;
            let body = fs::read_to_string(&file).map_err(io_err(&file))?;
            docs.push(TrialDocument::new(stem, body));
        }
        docs
    } else {
        read_jsonl::<TrialDocument>(path)?.into_iter().map(|(_, d)| d).collect()
    };
    validate_documents(docs)
}

/// Writes documents as a JSONL manifest readable by [`load_corpus`].
pub fn write_corpus(path: &Path, docs: &[TrialDocument]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("documents serialize");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reference judgments for one trial, one per domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabelSet {
    pub trial_id: String,
    pub labels: BTreeMap<RobDomain, RiskLabel>,
}

impl GoldLabelSet {
    pub fn label(&self, domain: RobDomain) -> RiskLabel {
        self.labels[&domain]
    }
}

#[derive(Deserialize)]
struct RawGold {
    trial_id: String,
    labels: BTreeMap<String, String>,
}

pub fn parse_gold_record(line: &str) -> Result<GoldLabelSet, CorpusError> {
    let raw: RawGold = serde_json::from_str(line)
        .map_err(|e| CorpusError::MalformedRecord { record: line.chars().take(60).collect(), reason: e.to_string() })?;
    gold_from_raw(raw)
}

fn gold_from_raw(raw: RawGold) -> Result<GoldLabelSet, CorpusError> {
    let mut labels = BTreeMap::new();
    for (key, value) in &raw.labels {
        let domain = RobDomain::parse(key).map_err(|e| CorpusError::MalformedRecord {
            record: raw.trial_id.clone(),
            reason: e.to_string(),
        })?;
        let label = parse_label(value)
            .map_err(|_| CorpusError::UnrecognizedLabel { trial_id: raw.trial_id.clone(), label: value.clone() })?;
        labels.insert(domain, label);
    }
    if let Some(domain) = RobDomain::ALL.into_iter().find(|d| !labels.contains_key(d)) {
        return Err(CorpusError::MissingDomain { trial_id: raw.trial_id, domain });
    }
    Ok(GoldLabelSet { trial_id: raw.trial_id, labels })
}

/// Loads `gold.jsonl`. Every record must label all seven domains.
pub fn load_gold(path: &Path) -> Result<Vec<GoldLabelSet>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_gold_jsonl(&text)
}

pub fn parse_gold_jsonl(text: &str) -> Result<Vec<GoldLabelSet>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let gold = parse_gold_record(line)?;
        if !seen.insert(gold.trial_id.clone()) {
            return Err(CorpusError::DuplicateTrialId(gold.trial_id));
        }
        out.push(gold);
    }
    Ok(out)
}

/// The bundled 100-trial sample whose per-domain label counts follow the
/// reference distribution (D6 = 89 low / 11 unclear / 0 high).
pub const SAMPLE_GOLD_JSONL: &str = include_str!("../data/sample_gold.jsonl");

pub fn sample_gold() -> Vec<GoldLabelSet> {
    parse_gold_jsonl(SAMPLE_GOLD_JSONL).expect("bundled sample gold is valid")
}

/// Count of gold labels per class for one domain. All three classes are present as keys.
pub fn label_distribution(golds: &[GoldLabelSet], domain: RobDomain) -> BTreeMap<RiskLabel, usize> {
    let mut counts: BTreeMap<RiskLabel, usize> = RiskLabel::ALL.into_iter().map(|l| (l, 0)).collect();
    for gold in golds {
        *counts.entry(gold.label(domain)).or_default() += 1;
    }
    counts
}

/// A supervised example used for optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    #[serde(default)]
    pub id: String,
    pub domain: RobDomain,
    pub excerpt: String,
    pub evidence_question: String,
    pub evidence_span: String,
    pub evaluative_question: String,
    pub label: RiskLabel,
    pub justification: String,
}

impl TrainingExample {
    /// Whether the evidence span occurs verbatim in the excerpt.
    pub fn span_is_literal(&self) -> bool {
        self.excerpt.contains(self.evidence_span.as_str())
    }

    fn validate(&self) -> Result<(), String> {
        let fields = [
            ("excerpt", &self.excerpt),
            ("evidence_question", &self.evidence_question),
            ("evidence_span", &self.evidence_span),
            ("evaluative_question", &self.evaluative_question),
            ("justification", &self.justification),
        ];
        match fields.iter().find(|(_, v)| v.trim().is_empty()) {
            Some((name, _)) => Err(format!("field {name} is empty")),
            None => Ok(()),
        }
    }
}

/// Loads `examples.jsonl`. Missing ids default to `<domain>-<line>`.
pub fn load_examples(path: &Path) -> Result<Vec<TrainingExample>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, mut ex) in read_jsonl::<TrainingExample>(path)? {
        if ex.id.is_empty() {
            ex.id = format!("{}-{line}", ex.domain);
        }
        ex.validate()
            .map_err(|reason| CorpusError::MalformedRecord { record: ex.id.clone(), reason })?;
        if !ex.span_is_literal() {
            log::warn!("example {}: evidence span is not a literal substring of the excerpt", ex.id);
        }
        if !seen.insert(ex.id.clone()) {
            return Err(CorpusError::MalformedRecord { record: ex.id, reason: "duplicate example id".into() });
        }
        out.push(ex);
    }
    Ok(out)
}

/// Class-balanced 18/12 split for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub domain: RobDomain,
    pub train: Vec<TrainingExample>,
    pub validation: Vec<TrainingExample>,
}

impl DatasetSplit {
    /// Checks sizes, class balance, domain and disjointness.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let check = |set: &[TrainingExample], per_label: usize, name: &str| -> Result<(), CorpusError> {
            for label in RiskLabel::ALL {
                let n = set.iter().filter(|e| e.label == label).count();
                if n != per_label {
                    return Err(CorpusError::InvalidSplit(format!("{name} has {n} {label} examples, expected {per_label}")));
                }
            }
            if set.len() != per_label * 3 {
                return Err(CorpusError::InvalidSplit(format!("{name} has {} examples", set.len())));
            }
            if let Some(e) = set.iter().find(|e| e.domain != self.domain) {
                return Err(CorpusError::InvalidSplit(format!("{name} example {} belongs to {}", e.id, e.domain)));
            }
            Ok(())
        };
        check(&self.train, TRAIN_PER_LABEL, "train")?;
        check(&self.validation, VALIDATION_PER_LABEL, "validation")?;
        let train_ids: HashSet<&str> = self.train.iter().map(|e| e.id.as_str()).collect();
        if let Some(e) = self.validation.iter().find(|e| train_ids.contains(e.id.as_str())) {
            return Err(CorpusError::InvalidSplit(format!("example {} is in both sets", e.id)));
        }
        Ok(())
    }
}

/// Seeded class-balanced split: shuffle each label's pool, take 6 for
/// training and the next 4 for validation.
pub fn build_split(domain: RobDomain, pool: &[TrainingExample], seed: u64) -> Result<DatasetSplit, CorpusError> {
    let need = TRAIN_PER_LABEL + VALIDATION_PER_LABEL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(TRAIN_PER_LABEL * 3);
    let mut validation = Vec::with_capacity(VALIDATION_PER_LABEL * 3);
    let mut by_label: Vec<Vec<&TrainingExample>> = Vec::new();
    for label in RiskLabel::ALL {
        let group: Vec<&TrainingExample> = pool.iter().filter(|e| e.domain == domain && e.label == label).collect();
        if group.len() < need {
            return Err(CorpusError::InsufficientExamples { label, have: group.len(), need });
        }
        by_label.push(group);
    }
    for mut group in by_label {
        group.shuffle(&mut rng);
        train.extend(group[..TRAIN_PER_LABEL].iter().map(|e| (*e).clone()));
        validation.extend(group[TRAIN_PER_LABEL..need].iter().map(|e| (*e).clone()));
    }
    train.shuffle(&mut rng);
    validation.shuffle(&mut rng);
    let split = DatasetSplit { domain, train, validation };
    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example(domain: RobDomain, label: RiskLabel, n: usize) -> TrainingExample {
        TrainingExample {
            id: format!("{domain}-{label}-{n}"),
            domain,
            excerpt: format!("Excerpt {n} describing the method."),
            evidence_question: "Extract the sentence.".into(),
            evidence_span: "describing the method".into(),
            evaluative_question: "Was it adequate?".into(),
            label,
            justification: format!("Annotated {label}."),
        }
    }

    fn pool(per_label: [usize; 3]) -> Vec<TrainingExample> {
        RiskLabel::ALL
            .into_iter()
            .zip(per_label)
            .flat_map(|(label, n)| (0..n).map(move |i| example(RobDomain::D1, label, i)))
            .collect()
    }

    #[test]
    fn split_is_balanced_and_deterministic() {
        let base = pool([10, 10, 10]);
        let a = build_split(RobDomain::D1, &base, 42).unwrap();
        let b = build_split(RobDomain::D1, &base, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 18);
        assert_eq!(a.validation.len(), 12);
        a.validate().unwrap();
        let c = build_split(RobDomain::D1, &pool([14, 14, 14]), 7).unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn split_reports_shortfall() {
        let err = build_split(RobDomain::D1, &pool([10, 10, 5]), 42).unwrap_err();
        assert!(matches!(err, CorpusError::InsufficientExamples { label: RiskLabel::High, have: 5, need: 10 }));
        let err = build_split(RobDomain::D2, &pool([10, 10, 10]), 42).unwrap_err();
        assert!(matches!(err, CorpusError::InsufficientExamples { label: RiskLabel::Low, have: 0, need: 10 }));
    }

    #[test]
    fn corpus_directory_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["T03", "T01", "T02"] {
            fs::write(dir.path().join(format!("{id}.txt")), format!("body of {id}")).unwrap();
        }
        fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let docs = load_corpus(dir.path()).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.trial_id.as_str()).collect();
        assert_eq!(ids, ["T01", "T02", "T03"]);
    }

    #[test]
    fn corpus_rejects_duplicates_and_empty_bodies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        fs::write(&path, "{\"trial_id\":\"T01\",\"body\":\"a\"}\n{\"trial_id\":\"T01\",\"body\":\"b\"}\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(CorpusError::DuplicateTrialId(id)) if id == "T01"));
        fs::write(&path, "{\"trial_id\":\"T02\",\"body\":\"  \"}\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(CorpusError::EmptyBody(id)) if id == "T02"));
        fs::write(&path, "{\"trial_id\":\"T02\"}\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(CorpusError::MalformedRecord { .. })));
    }

    #[test]
    fn gold_missing_domain() {
        let line = r#"{"trial_id":"T1","labels":{"D1":"low","D2":"low","D3":"low","D5":"low","D6":"low","D7":"low"}}"#;
        assert!(matches!(
            parse_gold_record(line),
            Err(CorpusError::MissingDomain { domain: RobDomain::D4, .. })
        ));
        let bad = r#"{"trial_id":"T1","labels":{"D1":"maybe","D2":"low","D3":"low","D4":"low","D5":"low","D6":"low","D7":"low"}}"#;
        assert!(matches!(parse_gold_record(bad), Err(CorpusError::UnrecognizedLabel { .. })));
    }

    #[test]
    fn sample_gold_distribution() {
        let golds = sample_gold();
        assert_eq!(golds.len(), 100);
        let d6 = label_distribution(&golds, RobDomain::D6);
        assert_eq!((d6[&RiskLabel::Low], d6[&RiskLabel::Unclear], d6[&RiskLabel::High]), (89, 11, 0));
        let d1 = label_distribution(&golds, RobDomain::D1);
        assert_eq!((d1[&RiskLabel::Low], d1[&RiskLabel::Unclear], d1[&RiskLabel::High]), (65, 28, 7));
        for d in RobDomain::ALL {
            assert_eq!(label_distribution(&golds, d).values().sum::<usize>(), 100);
        }
    }

    #[test]
    fn distribution_single_trial() {
        let gold = GoldLabelSet {
            trial_id: "T".into(),
            labels: RobDomain::ALL.into_iter().map(|d| (d, RiskLabel::Low)).collect(),
        };
        let dist = label_distribution(&[gold], RobDomain::D3);
        assert_eq!(dist[&RiskLabel::Low], 1);
        assert_eq!(dist[&RiskLabel::Unclear], 0);
        assert_eq!(dist[&RiskLabel::High], 0);
    }
}
