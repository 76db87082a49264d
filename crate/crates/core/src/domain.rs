//! The seven RoB 1 domains, the tripartite risk label and per-domain criteria.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_CRITERIA: &str = include_str!("../data/criteria.jsonl");
const BUNDLED_QUESTIONS: &str = include_str!("../data/seed_questions.jsonl");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("unrecognized risk label {0:?}")]
    UnrecognizedLabel(String),
    #[error("unknown domain code {0:?}")]
    UnknownDomain(String),
    #[error("criteria resource line {line}: {reason}")]
    MalformedCriteria { line: usize, reason: String },
    #[error("criteria resource has no entry for {0}")]
    MissingCriteria(RobDomain),
}

/// Risk-of-bias judgment. The derived ordering exists for display only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLabel {
    Low,
    Unclear,
    High,
}

impl RiskLabel {
    pub const ALL: [RiskLabel; 3] = [RiskLabel::Low, RiskLabel::Unclear, RiskLabel::High];

    /// Row/column index in a 3×3 confusion matrix.
    pub fn index(self) -> usize {
        match self {
            RiskLabel::Low => 0,
            RiskLabel::Unclear => 1,
            RiskLabel::High => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLabel::Low => "low",
            RiskLabel::Unclear => "unclear",
            RiskLabel::High => "high",
        }
    }

    /// Capitalized form used in structured model output (`Low`, `Unclear`, `High`).
    pub fn title(self) -> &'static str {
        match self {
            RiskLabel::Low => "Low",
            RiskLabel::Unclear => "Unclear",
            RiskLabel::High => "High",
        }
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLabel {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

/// Normalizes a label as emitted by a model or an annotator.
///
/// Matching is case-insensitive, tolerates surrounding whitespace, quotes,
/// trailing punctuation and an optional ` risk` suffix ("Unclear risk").
pub fn parse_label(raw: &str) -> Result<RiskLabel, DomainError> {
    let trimmed = raw
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*')
        .trim_end_matches(['.', ',', ';'])
        .trim();
    let lower = trimmed.to_ascii_lowercase();
    let core = lower
        .strip_suffix("risk")
        .map(|s| s.trim_end().trim_end_matches('-').trim_end())
        .unwrap_or(&lower);
    match core {
        "low" => Ok(RiskLabel::Low),
        "unclear" => Ok(RiskLabel::Unclear),
        "high" => Ok(RiskLabel::High),
        _ => Err(DomainError::UnrecognizedLabel(raw.to_string())),
    }
}

/// One of the seven RoB 1 assessment domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RobDomain {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
}

impl RobDomain {
    pub const ALL: [RobDomain; 7] = [
        RobDomain::D1,
        RobDomain::D2,
        RobDomain::D3,
        RobDomain::D4,
        RobDomain::D5,
        RobDomain::D6,
        RobDomain::D7,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RobDomain::D1 => "D1",
            RobDomain::D2 => "D2",
            RobDomain::D3 => "D3",
            RobDomain::D4 => "D4",
            RobDomain::D5 => "D5",
            RobDomain::D6 => "D6",
            RobDomain::D7 => "D7",
        }
    }

    pub fn canonical_name(self) -> &'static str {
        match self {
            RobDomain::D1 => "random sequence generation",
            RobDomain::D2 => "allocation concealment",
            RobDomain::D3 => "blinding of participants and personnel",
            RobDomain::D4 => "blinding of outcome assessment",
            RobDomain::D5 => "incomplete outcome data",
            RobDomain::D6 => "selective reporting",
            RobDomain::D7 => "other bias",
        }
    }

    /// Accepts either the code (`D3`, case-insensitive) or the canonical name.
    pub fn parse(raw: &str) -> Result<Self, DomainError> {
        let needle = raw.trim();
        RobDomain::ALL
            .into_iter()
            .find(|d| d.code().eq_ignore_ascii_case(needle) || d.canonical_name().eq_ignore_ascii_case(needle))
            .ok_or_else(|| DomainError::UnknownDomain(raw.to_string()))
    }
}

impl fmt::Display for RobDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RobDomain {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RobDomain::parse(s)
    }
}

/// Low/Unclear/High criteria text for one domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaSet {
    pub domain: RobDomain,
    pub low: String,
    pub unclear: String,
    pub high: String,
}

impl CriteriaSet {
    pub fn for_label(&self, label: RiskLabel) -> &str {
        match label {
            RiskLabel::Low => &self.low,
            RiskLabel::Unclear => &self.unclear,
            RiskLabel::High => &self.high,
        }
    }
}

#[derive(Deserialize)]
struct CriteriaRecord {
    domain_code: String,
    low: String,
    unclear: String,
    high: String,
}

/// Criteria for all seven domains, loaded from a JSONL resource.
#[derive(Debug, Clone)]
pub struct CriteriaTable {
    sets: BTreeMap<RobDomain, CriteriaSet>,
}

impl CriteriaTable {
    pub fn from_jsonl(text: &str) -> Result<Self, DomainError> {
        let mut sets = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let bad = |reason: String| DomainError::MalformedCriteria { line: line_no, reason };
            let rec: CriteriaRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let domain = RobDomain::parse(&rec.domain_code)?;
            for (name, text) in [("low", &rec.low), ("unclear", &rec.unclear), ("high", &rec.high)] {
                if text.trim().is_empty() {
                    return Err(bad(format!("{name} criterion is empty")));
                }
            }
            let set = CriteriaSet { domain, low: rec.low, unclear: rec.unclear, high: rec.high };
            if sets.insert(domain, set).is_some() {
                return Err(bad(format!("duplicate entry for {domain}")));
            }
        }
        if let Some(missing) = RobDomain::ALL.into_iter().find(|d| !sets.contains_key(d)) {
            return Err(DomainError::MissingCriteria(missing));
        }
        Ok(Self { sets })
    }

    /// The table shipped with the crate.
    pub fn bundled() -> &'static CriteriaTable {
        static TABLE: OnceLock<CriteriaTable> = OnceLock::new();
        TABLE.get_or_init(|| CriteriaTable::from_jsonl(BUNDLED_CRITERIA).expect("bundled criteria are valid"))
    }

    pub fn get(&self, domain: RobDomain) -> &CriteriaSet {
        &self.sets[&domain]
    }
}

/// Criteria for `domain` from the bundled resource.
pub fn criteria_for(domain: RobDomain) -> &'static CriteriaSet {
    CriteriaTable::bundled().get(domain)
}

/// Default evidence-identification and evaluative questions for a domain.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PairedQuestions {
    pub evidence_question: String,
    pub evaluative_question: String,
}

pub fn seed_questions(domain: RobDomain) -> &'static PairedQuestions {
    static QUESTIONS: OnceLock<BTreeMap<RobDomain, PairedQuestions>> = OnceLock::new();
    let map = QUESTIONS.get_or_init(|| {
        #[derive(Deserialize)]
        struct Rec {
            domain_code: String,
            #[serde(flatten)]
            questions: PairedQuestions,
        }
        BUNDLED_QUESTIONS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let rec: Rec = serde_json::from_str(l).expect("bundled questions are valid JSON");
                (RobDomain::parse(&rec.domain_code).expect("bundled domain code"), rec.questions)
            })
            .collect()
    });
    &map[&domain]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_label_variants() {
        assert_eq!(parse_label("Low").unwrap(), RiskLabel::Low);
        assert_eq!(parse_label("unclear risk").unwrap(), RiskLabel::Unclear);
        assert_eq!(parse_label("  HIGH Risk ").unwrap(), RiskLabel::High);
        assert_eq!(parse_label("\"Low\"").unwrap(), RiskLabel::Low);
        assert_eq!(parse_label("high-risk").unwrap(), RiskLabel::High);
        assert!(matches!(parse_label("definitely yes"), Err(DomainError::UnrecognizedLabel(_))));
        assert!(parse_label("").is_err());
        assert!(parse_label("lowish").is_err());
    }

    #[test]
    fn label_round_trip() {
        for label in RiskLabel::ALL {
            assert_eq!(parse_label(label.as_str()).unwrap(), label);
            assert_eq!(parse_label(label.title()).unwrap(), label);
        }
    }

    #[test]
    fn domain_codes_and_names_are_bijective() {
        let codes: std::collections::HashSet<_> = RobDomain::ALL.iter().map(|d| d.code()).collect();
        let names: std::collections::HashSet<_> = RobDomain::ALL.iter().map(|d| d.canonical_name()).collect();
        assert_eq!(codes.len(), 7);
        assert_eq!(names.len(), 7);
        for d in RobDomain::ALL {
            assert_eq!(RobDomain::parse(d.code()).unwrap(), d);
            assert_eq!(RobDomain::parse(d.canonical_name()).unwrap(), d);
        }
        assert!(RobDomain::parse("D8").is_err());
    }

    #[test]
    fn bundled_criteria_examples() {
        assert!(criteria_for(RobDomain::D1).low.contains("computer-generated"));
        assert!(criteria_for(RobDomain::D6).high.contains("selectively reported outcomes"));
        assert!(criteria_for(RobDomain::D7).unclear.contains("unverified sources of bias"));
        for d in RobDomain::ALL {
            let c = criteria_for(d);
            assert_eq!(c.domain, d);
            for l in RiskLabel::ALL {
                assert!(!c.for_label(l).is_empty());
            }
            assert!(!seed_questions(d).evaluative_question.is_empty());
        }
    }

    #[test]
    fn criteria_resource_validation() {
        let one = r#"{"domain_code": "D1", "low": "a", "unclear": "b", "high": "c"}"#;
        assert!(matches!(CriteriaTable::from_jsonl(one), Err(DomainError::MissingCriteria(RobDomain::D2))));
        let empty = r#"{"domain_code": "D1", "low": "", "unclear": "b", "high": "c"}"#;
        assert!(matches!(
            CriteriaTable::from_jsonl(empty),
            Err(DomainError::MalformedCriteria { line: 1, .. })
        ));
    }
}
