//! `robforge` command-line runner.
//!
//! Exit codes: 0 success, 1 some items failed, 2 usage or configuration
//! error (with a JSON error object on stderr).

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robforge_core::evaluation::Metric;
use robforge_core::RobDomain;

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::RunDir;

#[derive(Debug, Parser)]
#[command(name = "robforge", version, about = "Risk-of-bias assessment with reflective prompt optimization")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scripted mock backend (JSONL) used for both model roles.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Output directory (overrides paths.output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Name of the run directory under the output directory; defaults to a UTC timestamp.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// `light`, `medium`, `heavy` or `cap=N` metric calls.
    #[arg(long, global = true)]
    budget: Option<String>,
    #[arg(long, global = true)]
    n_runs: Option<usize>,
    #[arg(long, global = true)]
    n_evals: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize one domain's instruction over `n_runs` seeds.
    Optimize {
        #[arg(long)]
        domain: String,
        /// Training examples (JSONL); overrides paths.examples.
        #[arg(long)]
        examples: Option<PathBuf>,
    },
    /// Assess trials with prompt artifacts (or the seed prompts), `n_evals` times.
    Assess {
        /// Prompt artifact files or directories.
        #[arg(long, num_args = 1..)]
        prompts: Vec<PathBuf>,
        #[arg(long)]
        trials: Option<PathBuf>,
        /// Restrict to these domains (comma separated).
        #[arg(long, value_delimiter = ',')]
        domain: Vec<String>,
    },
    /// Agreement metrics against gold labels.
    Evaluate {
        /// Assessment or harmonized JSONL files, or directories of them.
        #[arg(long, num_args = 1.., required = true)]
        assessments: Vec<PathBuf>,
        /// Gold JSONL, or `sample` for the bundled sample labels.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Label written to the model_pair column.
        #[arg(long)]
        label: Option<String>,
    },
    /// Side-by-side comparison of metric files.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        labels: Vec<String>,
        #[arg(long, default_value = "correct_rate")]
        metric: String,
    },
    /// Map an external prompt set's ratings onto the seven domains.
    Harmonize {
        /// `A`, `B`, `C` or a scheme JSON file.
        #[arg(long)]
        scheme: String,
        /// One ratings JSONL per repeated execution.
        #[arg(long, num_args = 1.., required = true)]
        ratings: Vec<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Cost and time table from ledger summaries.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        ledgers: Vec<PathBuf>,
    },
}

fn parse_domain(raw: &str) -> Result<RobDomain, CliError> {
    RobDomain::parse(raw).map_err(|e| CliError::Usage(e.to_string()))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(b) = &cli.budget {
        config.budget = b.clone();
    }
    if let Some(n) = cli.n_runs {
        config.n_runs = n;
    }
    if let Some(n) = cli.n_evals {
        config.n_evals = n;
    }
    if let Some(s) = cli.seed {
        config.decode.seed = s;
    }
    if let Some(o) = &cli.out {
        config.paths.output_dir = o.clone();
    }
    match &cli.command {
        Command::Optimize { examples: Some(e), .. } => config.paths.examples = Some(e.clone()),
        Command::Evaluate { label: Some(l), .. } => config.label = Some(l.clone()),
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<commands::Outcome, CliError> {
    let config = resolve_config(&cli)?;
    let run_id = cli.run_id.clone().unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    let run = RunDir::create(&config.paths.output_dir, &run_id)?;
    let ctx = Context { config, run, mock: cli.mock.clone() };
    let outcome = match &cli.command {
        Command::Optimize { domain, .. } => commands::optimize(&ctx, parse_domain(domain)?),
        Command::Assess { prompts, trials, domain } => {
            let domains = domain.iter().map(|d| parse_domain(d)).collect::<Result<Vec<_>, _>>()?;
            commands::assess(&ctx, prompts, trials.as_deref(), &domains)
        }
        Command::Evaluate { assessments, gold, .. } => commands::evaluate(&ctx, assessments, gold.as_deref()),
        Command::Compare { metrics, labels, metric } => {
            let metric = Metric::parse(metric).ok_or_else(|| CliError::Usage(format!("unknown metric {metric:?}")))?;
            commands::compare(&ctx, metrics, labels, metric)
        }
        Command::Harmonize { scheme, ratings, label } => commands::harmonize(&ctx, scheme, ratings, label.as_deref()),
        Command::Report { ledgers } => commands::report(&ctx, ledgers),
    }?;
    ctx.run.finish()?;
    let mut outcome = outcome;
    outcome.summary["run_dir"] = ctx.run.root().display().to_string().into();
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
            if outcome.partial {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
