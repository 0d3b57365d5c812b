//! Command-line entry point: `pretrain`, `adapt`, `eval`, `theory`,
//! `ablate`. Every run takes a JSON config (unknown keys rejected), merges
//! command-line overrides, writes the fully resolved config next to its
//! outputs, and emits machine-readable metrics (JSON-lines and CSV).
//!
//! Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical
//! failure.

mod commands;
mod config;

pub use config::{resolved_config_json, AdaptSection, RunConfig, SimSection, TheorySection};

use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_ARTIFACT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::MissingArtifact(m) => write!(f, "missing artifact: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingArtifact(_) => EXIT_MISSING_ARTIFACT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

/// Parsed command line.
#[derive(Debug, Clone, Default)]
pub struct CliArgs {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub loops: Option<usize>,
    pub test_terrain: Option<String>,
    pub test_difficulty: Option<f64>,
}

pub const USAGE: &str = "usage: loopsr <pretrain|adapt|eval|theory|ablate> [options]
  --config <path>          JSON run configuration
  --seed <u64>             override the config seed
  --out <dir>              output run directory (pretrain/theory)
  --run-dir <dir>          existing run directory (adapt/eval/ablate)
  --loops <n>              override adaptation loop count
  --test-terrain <name>    flat|slope_up|slope_down|stairs|rough
  --test-difficulty <d>    0.3|0.6|0.9
";

fn parse_args(args: &[String]) -> Result<CliArgs, CliError> {
    if args.is_empty() {
        return Err(CliError::Config(format!("missing subcommand\n{USAGE}")));
    }
    let mut parsed = CliArgs {
        command: args[0].clone(),
        ..CliArgs::default()
    };
    let mut i = 1;
    while i < args.len() {
        let flag = args[i].as_str();
        let value = args.get(i + 1).ok_or_else(|| {
            CliError::Config(format!("flag {flag} expects a value\n{USAGE}"))
        })?;
        match flag {
            "--config" => parsed.config = Some(PathBuf::from(value)),
            "--seed" => {
                parsed.seed = Some(value.parse().map_err(|_| {
                    CliError::Config(format!("--seed expects an unsigned integer, got {value}"))
                })?)
            }
            "--out" => parsed.out = Some(PathBuf::from(value)),
            "--run-dir" => parsed.run_dir = Some(PathBuf::from(value)),
            "--loops" => {
                parsed.loops = Some(value.parse().map_err(|_| {
                    CliError::Config(format!("--loops expects an integer, got {value}"))
                })?)
            }
            "--test-terrain" => parsed.test_terrain = Some(value.clone()),
            "--test-difficulty" => {
                parsed.test_difficulty = Some(value.parse().map_err(|_| {
                    CliError::Config(format!("--test-difficulty expects a float, got {value}"))
                })?)
            }
            other => {
                return Err(CliError::Config(format!("unknown flag {other}\n{USAGE}")));
            }
        }
        i += 2;
    }
    Ok(parsed)
}

/// Run a full command line; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let result = match parsed.command.as_str() {
        "pretrain" => commands::cmd_pretrain(&parsed),
        "adapt" => commands::cmd_adapt(&parsed),
        "eval" => commands::cmd_eval(&parsed),
        "theory" => commands::cmd_theory(&parsed),
        "ablate" => commands::cmd_ablate(&parsed),
        other => Err(CliError::Config(format!("unknown subcommand {other}\n{USAGE}"))),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
