//! Run configuration: TOML file, then `ROBFORGE_*` environment overrides,
//! then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use robforge_core::gateway::{DecodeParams, Price};
use robforge_core::optimizer::OptimizationBudget;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: String,
    /// OpenAI-compatible base URL; required for live runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    pub main: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ModelSpec>,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            main: ModelSpec { model: "mock-main".into(), base_url: None },
            reflection: Some(ModelSpec { model: "mock-reflection".into(), base_url: None }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub trials: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decode {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_top_p() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    42
}

impl Default for Decode {
    fn default() -> Self {
        Self { temperature: 0.0, top_p: 1.0, seed: 42 }
    }
}

impl Decode {
    pub fn params(&self) -> DecodeParams {
        DecodeParams { temperature: self.temperature, top_p: self.top_p, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_budget")]
    pub budget: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    #[serde(default = "default_n_evals")]
    pub n_evals: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Label for the `model_pair` column; defaults to `main+reflection` model names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_cap_microusd: Option<u64>,
    #[serde(default)]
    pub backends: Backends,
    /// Per-model price table.
    #[serde(default)]
    pub prices: BTreeMap<String, Price>,
    #[serde(default)]
    pub decode: Decode,
    #[serde(default)]
    pub paths: Paths,
}

fn default_budget() -> String {
    "light".into()
}

fn default_parallelism() -> usize {
    4
}

fn default_n_runs() -> usize {
    5
}

fn default_n_evals() -> usize {
    3
}

fn default_resamples() -> usize {
    2000
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

/// Keys that look like secrets; these may only come from the environment.
fn find_secret(value: &toml::Value, path: &str) -> Option<String> {
    match value {
        toml::Value::Table(t) => t.iter().find_map(|(k, v)| {
            let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            let lower = k.to_ascii_lowercase();
            if lower.contains("api_key") || lower.contains("apikey") || lower == "token" || lower == "secret" {
                Some(here)
            } else {
                find_secret(v, &here)
            }
        }),
        _ => None,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(key) = find_secret(&value, "") {
            return Err(CliError::Config(format!(
                "{key}: credentials are read only from the {} environment variable",
                robforge_core::gateway::API_KEY_ENV
            )));
        }
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `ROBFORGE_*` overrides; `lookup` is `std::env::var` in production.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
            raw.trim().parse().map_err(|_| CliError::Config(format!("{key}={raw:?} is not valid")))
        }
        let get = |k: &str| lookup(k).filter(|v| !v.is_empty());
        if let Some(v) = get("ROBFORGE_SEED") {
            self.decode.seed = parse("ROBFORGE_SEED", &v)?;
        }
        if let Some(v) = get("ROBFORGE_TEMPERATURE") {
            self.decode.temperature = parse("ROBFORGE_TEMPERATURE", &v)?;
        }
        if let Some(v) = get("ROBFORGE_TOP_P") {
            self.decode.top_p = parse("ROBFORGE_TOP_P", &v)?;
        }
        if let Some(v) = get("ROBFORGE_PARALLELISM") {
            self.parallelism = parse("ROBFORGE_PARALLELISM", &v)?;
        }
        if let Some(v) = get("ROBFORGE_N_RUNS") {
            self.n_runs = parse("ROBFORGE_N_RUNS", &v)?;
        }
        if let Some(v) = get("ROBFORGE_N_EVALS") {
            self.n_evals = parse("ROBFORGE_N_EVALS", &v)?;
        }
        if let Some(v) = get("ROBFORGE_BUDGET") {
            self.budget = v;
        }
        if let Some(v) = get("ROBFORGE_MAIN_MODEL") {
            self.backends.main.model = v;
        }
        if let Some(v) = get("ROBFORGE_REFLECTION_MODEL") {
            match &mut self.backends.reflection {
                Some(r) => r.model = v,
                None => self.backends.reflection = Some(ModelSpec { model: v, base_url: None }),
            }
        }
        if let Some(v) = get("ROBFORGE_BASE_URL") {
            self.backends.main.base_url = Some(v.clone());
            if let Some(r) = &mut self.backends.reflection {
                r.base_url = Some(v);
            }
        }
        for (key, slot) in [
            ("ROBFORGE_TRIALS", &mut self.paths.trials),
            ("ROBFORGE_GOLD", &mut self.paths.gold),
            ("ROBFORGE_EXAMPLES", &mut self.paths.examples),
        ] {
            if let Some(v) = get(key) {
                *slot = Some(PathBuf::from(v));
            }
        }
        if let Some(v) = get("ROBFORGE_OUTPUT_DIR") {
            self.paths.output_dir = PathBuf::from(v);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.decode.params().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.budget()?;
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if self.n_runs == 0 || self.n_evals == 0 {
            return Err(CliError::Config("n_runs and n_evals must be at least 1".into()));
        }
        if self.bootstrap_resamples < 100 {
            return Err(CliError::Config("bootstrap_resamples must be at least 100".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<OptimizationBudget, CliError> {
        OptimizationBudget::parse(&self.budget)
            .ok_or_else(|| CliError::Config(format!("budget {:?}: expected light, medium, heavy or cap=N", self.budget)))
    }

    pub fn price(&self, model: &str) -> Price {
        self.prices.get(model).copied().unwrap_or_default()
    }

    pub fn model_pair(&self) -> String {
        self.label.clone().unwrap_or_else(|| match &self.backends.reflection {
            Some(r) => format!("{}+{}", self.backends.main.model, r.model),
            None => self.backends.main.model.clone(),
        })
    }
}
