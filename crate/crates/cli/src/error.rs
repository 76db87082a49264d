use std::path::Path;

use robforge_core::corpus::CorpusError;
use robforge_core::evaluation::EvalError;
use robforge_core::harmonize::HarmonizeError;
use serde_json::json;
use thiserror::Error;

/// Failures that stop a command. All map to exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Harmonize(#[from] HarmonizeError),
    #[error("corrupt prompt artifact {path}: {reason}")]
    CorruptArtifact { path: String, reason: String },
    #[error("metric files do not line up: {0}")]
    SchemaMismatch(String),
    #[error("malformed assessment record {path}:{line}: {reason}")]
    MalformedAssessment { path: String, line: usize, reason: String },
}

/// Name of the enum variant, from its `Debug` form.
fn variant_name(debug: &str) -> String {
    debug.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or("Error").to_string()
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// Machine-readable error kind, e.g. `InsufficientExamples`.
    pub fn kind(&self) -> String {
        match self {
            CliError::Corpus(e) => variant_name(&format!("{e:?}")),
            CliError::Eval(e) => variant_name(&format!("{e:?}")),
            CliError::Harmonize(e) => variant_name(&format!("{e:?}")),
            other => variant_name(&format!("{other:?}")),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({"error": self.kind(), "message": self.to_string()})
    }
}

#[cfg(test)]
mod tests {
    use robforge_core::RiskLabel;

    use super::*;

    #[test]
    fn kinds() {
        let e = CliError::from(CorpusError::InsufficientExamples { label: RiskLabel::Low, have: 0, need: 10 });
        assert_eq!(e.kind(), "InsufficientExamples");
        assert_eq!(CliError::from(EvalError::MissingGold("T".into())).kind(), "MissingGold");
        assert_eq!(CliError::SchemaMismatch("x".into()).kind(), "SchemaMismatch");
        assert_eq!(CliError::Usage("x".into()).to_json()["error"], "Usage");
    }
}
