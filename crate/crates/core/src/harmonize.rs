//! Mapping external rating schemes onto the seven-domain tripartite scheme.
//!
//! An [`ExternalScheme`] is data: which external question feeds which domain,
//! which way its yes/no scale points, and how blinding subdomains merge.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{parse_label, RiskLabel, RobDomain};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HarmonizeError {
    #[error("subdomain rating set is empty")]
    EmptyRatingSet,
    #[error("{ratings} ratings but {sources} sources")]
    SourceMismatch { ratings: usize, sources: usize },
    #[error("external domain {0:?} is not mapped in this scheme")]
    UnmappedDomain(String),
    #[error("unrecognized four-level rating {0:?}")]
    UnrecognizedRating(String),
    #[error("invalid scheme {scheme:?}: {reason}")]
    InvalidScheme { scheme: String, reason: String },
    #[error("trial {trial_id}: {reason}")]
    MalformedRatings { trial_id: String, reason: String },
}

/// Four-level answer scale used by several published prompt sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourLevelRating {
    DefinitelyYes,
    ProbablyYes,
    ProbablyNo,
    DefinitelyNo,
}

impl FourLevelRating {
    pub const ALL: [FourLevelRating; 4] = [Self::DefinitelyYes, Self::ProbablyYes, Self::ProbablyNo, Self::DefinitelyNo];
}

impl fmt::Display for FourLevelRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DefinitelyYes => "definitely yes",
            Self::ProbablyYes => "probably yes",
            Self::ProbablyNo => "probably no",
            Self::DefinitelyNo => "definitely no",
        })
    }
}

impl FromStr for FourLevelRating {
    type Err = HarmonizeError;

    /// Accepts spaces, hyphens or underscores between the words, any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .trim_end_matches(['.', ','])
            .to_ascii_lowercase()
            .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        match norm.as_str() {
            "definitely yes" => Ok(Self::DefinitelyYes),
            "probably yes" => Ok(Self::ProbablyYes),
            "probably no" => Ok(Self::ProbablyNo),
            "definitely no" => Ok(Self::DefinitelyNo),
            _ => Err(HarmonizeError::UnrecognizedRating(s.to_string())),
        }
    }
}

/// Which end of the yes/no scale means methodologically adequate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    YesMeansLow,
    YesMeansHigh,
}

/// Definite answers map to low/high (per polarity); probable answers to unclear.
pub fn map_four_level(rating: FourLevelRating, polarity: Polarity) -> RiskLabel {
    use FourLevelRating::*;
    let yes_label = match polarity {
        Polarity::YesMeansLow => RiskLabel::Low,
        Polarity::YesMeansHigh => RiskLabel::High,
    };
    let no_label = match polarity {
        Polarity::YesMeansLow => RiskLabel::High,
        Polarity::YesMeansHigh => RiskLabel::Low,
    };
    match rating {
        DefinitelyYes => yes_label,
        DefinitelyNo => no_label,
        ProbablyYes | ProbablyNo => RiskLabel::Unclear,
    }
}

/// Ratings of the subdomains that make up one domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubdomainRatingSet {
    pub target: RobDomain,
    ratings: Vec<RiskLabel>,
    sources: Vec<String>,
}

impl SubdomainRatingSet {
    pub fn new(target: RobDomain, ratings: Vec<RiskLabel>, sources: Vec<String>) -> Result<Self, HarmonizeError> {
        if ratings.len() != sources.len() {
            return Err(HarmonizeError::SourceMismatch { ratings: ratings.len(), sources: sources.len() });
        }
        Ok(Self { target, ratings, sources })
    }

    pub fn ratings(&self) -> &[RiskLabel] {
        &self.ratings
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }
}

/// Any high gives high, all low gives low, anything else is unclear.
pub fn merge_labels(ratings: &[RiskLabel]) -> Result<RiskLabel, HarmonizeError> {
    if ratings.is_empty() {
        return Err(HarmonizeError::EmptyRatingSet);
    }
    Ok(if ratings.contains(&RiskLabel::High) {
        RiskLabel::High
    } else if ratings.iter().all(|&r| r == RiskLabel::Low) {
        RiskLabel::Low
    } else {
        RiskLabel::Unclear
    })
}

pub fn merge_subdomains(set: &SubdomainRatingSet) -> Result<RiskLabel, HarmonizeError> {
    merge_labels(&set.ratings)
}

/// One external question or domain and where it lands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainMapping {
    pub external_name: String,
    pub rob1_domain: RobDomain,
    #[serde(default)]
    pub polarity: Polarity,
}

fn name_key(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Looks up `external_name` (case- and whitespace-insensitive).
pub fn map_external_domain(mappings: &[DomainMapping], external_name: &str) -> Result<RobDomain, HarmonizeError> {
    find_mapping(mappings, external_name).map(|m| m.rob1_domain)
}

fn find_mapping<'a>(mappings: &'a [DomainMapping], external_name: &str) -> Result<&'a DomainMapping, HarmonizeError> {
    let key = name_key(external_name);
    mappings
        .iter()
        .find(|m| name_key(&m.external_name) == key)
        .ok_or_else(|| HarmonizeError::UnmappedDomain(external_name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    FourLevel,
    Tripartite,
}

/// An external prompt set described as data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalScheme {
    pub name: String,
    pub scale: Scale,
    pub domains: Vec<DomainMapping>,
    /// Domains fed by several external items, listing those items.
    #[serde(default)]
    pub subdomain_groups: BTreeMap<RobDomain, Vec<String>>,
    /// Extra spellings for tripartite answers, e.g. `"some concerns": "unclear"`.
    #[serde(default)]
    pub aliases: BTreeMap<String, RiskLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Ratings of one trial under an external scheme, keyed by external name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRatings {
    pub trial_id: String,
    pub ratings: BTreeMap<String, String>,
}

/// Per-domain labels produced by harmonization (or any other labeller).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub trial_id: String,
    pub run_id: String,
    pub labels: BTreeMap<RobDomain, RiskLabel>,
}

pub const SCHEME_A_JSON: &str = include_str!("../data/schemes/A.json");
pub const SCHEME_B_JSON: &str = include_str!("../data/schemes/B.json");
pub const SCHEME_C_JSON: &str = include_str!("../data/schemes/C.json");

impl ExternalScheme {
    pub fn from_json(text: &str) -> Result<Self, HarmonizeError> {
        let scheme: ExternalScheme = serde_json::from_str(text)
            .map_err(|e| HarmonizeError::InvalidScheme { scheme: "<unparsed>".into(), reason: e.to_string() })?;
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarmonizeError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarmonizeError::InvalidScheme {
            scheme: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// The shipped prompt sets `A`, `B` and `C`.
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "A" | "a" => SCHEME_A_JSON,
            "B" | "b" => SCHEME_B_JSON,
            "C" | "c" => SCHEME_C_JSON,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled schemes are valid"))
    }

    /// Names are unique, and a domain fed by several items has a matching subdomain group.
    pub fn validate(&self) -> Result<(), HarmonizeError> {
        let bad = |reason: String| HarmonizeError::InvalidScheme { scheme: self.name.clone(), reason };
        if self.domains.is_empty() {
            return Err(bad("no domains declared".into()));
        }
        let mut per_domain: BTreeMap<RobDomain, Vec<String>> = BTreeMap::new();
        for (i, m) in self.domains.iter().enumerate() {
            if self.domains[..i].iter().any(|o| name_key(&o.external_name) == name_key(&m.external_name)) {
                return Err(bad(format!("{:?} declared twice", m.external_name)));
            }
            per_domain.entry(m.rob1_domain).or_default().push(name_key(&m.external_name));
        }
        for (domain, names) in &per_domain {
            let group = self.subdomain_groups.get(domain).map(|g| g.iter().map(|n| name_key(n)).collect::<Vec<_>>());
            match group {
                None if names.len() > 1 => return Err(bad(format!("{domain} has several items but no subdomain group"))),
                Some(mut g) => {
                    let mut expected = names.clone();
                    g.sort();
                    expected.sort();
                    if g != expected {
                        return Err(bad(format!("subdomain group for {domain} does not list exactly its items")));
                    }
                }
                None => {}
            }
        }
        if let Some(d) = self.subdomain_groups.keys().find(|d| !per_domain.contains_key(d)) {
            return Err(bad(format!("subdomain group for {d} has no mapped items")));
        }
        Ok(())
    }

    /// Domains this scheme can rate.
    pub fn covered_domains(&self) -> Vec<RobDomain> {
        let mut out: Vec<RobDomain> = self.domains.iter().map(|m| m.rob1_domain).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Converts one raw answer for a declared item.
    pub fn map_rating(&self, external_name: &str, raw: &str) -> Result<RiskLabel, HarmonizeError> {
        let mapping = find_mapping(&self.domains, external_name)?;
        match self.scale {
            Scale::FourLevel => Ok(map_four_level(raw.parse()?, mapping.polarity)),
            Scale::Tripartite => {
                if let Some(&label) = self.aliases.get(&name_key(raw)) {
                    return Ok(label);
                }
                parse_label(raw).map_err(|_| HarmonizeError::UnrecognizedRating(raw.to_string()))
            }
        }
    }

    /// Maps every rated item and merges subdomains. Domains with no rated
    /// item are absent from the result; items outside the scheme are an error.
    pub fn harmonize(&self, ratings: &ExternalRatings) -> Result<BTreeMap<RobDomain, RiskLabel>, HarmonizeError> {
        let mut grouped: BTreeMap<RobDomain, (Vec<RiskLabel>, Vec<String>)> = BTreeMap::new();
        for (name, raw) in &ratings.ratings {
            let domain = map_external_domain(&self.domains, name)?;
            let label = self.map_rating(name, raw).map_err(|e| HarmonizeError::MalformedRatings {
                trial_id: ratings.trial_id.clone(),
                reason: format!("{name}: {e}"),
            })?;
            let entry = grouped.entry(domain).or_default();
            entry.0.push(label);
            entry.1.push(name.clone());
        }
        grouped
            .into_iter()
            .map(|(domain, (labels, sources))| {
                let set = SubdomainRatingSet::new(domain, labels, sources)?;
                Ok((domain, merge_subdomains(&set)?))
            })
            .collect()
    }
}

/// Parses JSONL of [`ExternalRatings`].
pub fn parse_external_ratings(text: &str) -> Result<Vec<ExternalRatings>, HarmonizeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarmonizeError::MalformedRatings {
                trial_id: format!("line {}", i + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use FourLevelRating::*;
    use RiskLabel::*;

    #[test]
    fn four_level_examples() {
        assert_eq!(map_four_level(DefinitelyYes, Polarity::YesMeansLow), Low);
        assert_eq!(map_four_level(ProbablyNo, Polarity::YesMeansLow), Unclear);
        assert_eq!(map_four_level(DefinitelyYes, Polarity::YesMeansHigh), High);
        assert_eq!(map_four_level(DefinitelyNo, Polarity::YesMeansHigh), Low);
    }

    #[test]
    fn four_level_parsing() {
        assert_eq!("Definitely yes".parse::<FourLevelRating>().unwrap(), DefinitelyYes);
        assert_eq!("probably_no".parse::<FourLevelRating>().unwrap(), ProbablyNo);
        assert_eq!(" PROBABLY-YES. ".parse::<FourLevelRating>().unwrap(), ProbablyYes);
        assert!("maybe".parse::<FourLevelRating>().is_err());
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_labels(&[Low, High]).unwrap(), High);
        assert_eq!(merge_labels(&[Low, Low, Low]).unwrap(), Low);
        assert_eq!(merge_labels(&[Low, Unclear]).unwrap(), Unclear);
        assert_eq!(merge_labels(&[]).unwrap_err(), HarmonizeError::EmptyRatingSet);
        assert!(SubdomainRatingSet::new(RobDomain::D3, vec![Low], vec![]).is_err());
    }

    #[test]
    fn scheme_a_domain_lookup() {
        let a = ExternalScheme::bundled("A").unwrap();
        assert_eq!(map_external_domain(&a.domains, "randomization process").unwrap(), RobDomain::D1);
        assert_eq!(map_external_domain(&a.domains, "Allocation  Concealment").unwrap(), RobDomain::D2);
        assert_eq!(
            map_external_domain(&a.domains, "deviation from intended interventions").unwrap_err(),
            HarmonizeError::UnmappedDomain("deviation from intended interventions".into())
        );
        assert_eq!(a.map_rating("randomization process", "Some concerns").unwrap(), Unclear);
    }

    #[test]
    fn bundled_schemes_validate() {
        for name in ["A", "B", "C"] {
            let s = ExternalScheme::bundled(name).unwrap();
            assert!(!s.covered_domains().is_empty());
        }
        let b = ExternalScheme::bundled("B").unwrap();
        assert_eq!(b.covered_domains(), RobDomain::ALL.to_vec());
        assert_eq!(b.subdomain_groups.len(), 2);
    }

    #[test]
    fn harmonize_merges_blinding_items() {
        let b = ExternalScheme::bundled("B").unwrap();
        let d3: Vec<String> = b.subdomain_groups[&RobDomain::D3].clone();
        let ratings = ExternalRatings {
            trial_id: "T1".into(),
            ratings: [
                (d3[0].clone(), "definitely yes".to_string()),
                (d3[1].clone(), "probably no".to_string()),
            ]
            .into_iter()
            .collect(),
        };
        let out = b.harmonize(&ratings).unwrap();
        assert_eq!(out, [(RobDomain::D3, Unclear)].into_iter().collect());
    }

    #[test]
    fn invalid_scheme_rejected() {
        let text = r#"{"name":"X","scale":"four_level","domains":[
            {"external_name":"a","rob1_domain":"D3"},{"external_name":"b","rob1_domain":"D3"}]}"#;
        assert!(matches!(ExternalScheme::from_json(text), Err(HarmonizeError::InvalidScheme { .. })));
    }
}
