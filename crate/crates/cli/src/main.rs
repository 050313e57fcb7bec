//! `ocsim` experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocsim_core::experiment::ExperimentError;
use ocsim_core::{CircuitSetting, ConfigError, RuleMode};
use thiserror::Error;

mod commands;
mod report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Trace(_) => CliError::Runtime(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

/// Flow-level simulator for circuit-assisted data-center packet tiers.
#[derive(Parser, Debug)]
#[command(name = "ocsim", version)]
pub struct Cli {
    /// Experiment config (TOML)
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in experiment preset (see `ocsim presets`)
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Single seed, overrides the config's seed list
    #[arg(long, global = true, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed list such as `1,2,5` or `1-30`
    #[arg(long, global = true, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    /// Output directory, overrides the config's
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel simulation cells
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write event, rule and demand logs per cell
    #[arg(long, global = true)]
    pub debug_logs: bool,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic trace for every seed
    Generate,
    /// Run every (seed, circuit mode, rule mode) cell
    Run {
        /// Circuit modes: none, private, shared
        #[arg(long, value_delimiter = ',', value_parser = parse_circuits)]
        modes: Option<Vec<CircuitSetting>>,
        /// Rule modes: cshare, per_flow
        #[arg(long, value_delimiter = ',', value_parser = parse_rules)]
        rules: Option<Vec<RuleMode>>,
    },
    /// Merge report files into comparison, completion and footprint tables
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Check the config and optionally a trace file
    Validate {
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print the switch adjacency list as CSV
    Topology,
    /// List presets, or print one as TOML
    Presets { name: Option<String> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
                let b: u64 = b.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|e| format!("`{part}`: {e}"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(out))
}

fn parse_circuits(s: &str) -> Result<CircuitSetting, String> {
    match s {
        "none" => Ok(CircuitSetting::None),
        "private" => Ok(CircuitSetting::Private),
        "shared" => Ok(CircuitSetting::Shared),
        _ => Err(format!("unknown circuit mode `{s}` (none, private, shared)")),
    }
}

fn parse_rules(s: &str) -> Result<RuleMode, String> {
    match s {
        "cshare" => Ok(RuleMode::Cshare),
        "per_flow" | "per-flow" => Ok(RuleMode::PerFlow),
        _ => Err(format!("unknown rule mode `{s}` (cshare, per_flow)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
