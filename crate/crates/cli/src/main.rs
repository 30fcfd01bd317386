//! `kglab`: experiments on the damped stochastic Klein-Gordon field.

mod commands;
mod config;
mod error;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;

use config::{ExperimentConfig, RawConfig};
use error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Validate,
    Cov,
    Sample,
    Picard,
    Lil,
    Mc,
    Simlil,
    Scan,
    Propagate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Cov => "cov",
            Command::Sample => "sample",
            Command::Picard => "picard",
            Command::Lil => "lil",
            Command::Mc => "mc",
            Command::Simlil => "simlil",
            Command::Scan => "scan",
            Command::Propagate => "propagate",
        }
    }
}

/// Any config key may also be given as `--key value`, e.g.
/// `kglab cov --a 0 --m 0 --p 1,0 --q 1,0`.
#[derive(Debug, Parser)]
#[command(name = "kglab", version, about = "Numerical lab for the damped stochastic Klein-Gordon field")]
struct Cli {
    command: Command,
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `--key value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let command = cli.command.name();
    let mut raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    raw.apply_overrides(&cli.overrides)?;
    let cfg = ExperimentConfig::resolve(command, raw)?;
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();

    if let Command::Validate = cli.command {
        let checks = validate::run_suite();
        validate::print_table(&checks);
        let failed = checks.iter().filter(|c| !c.pass).count();
        let rows: Vec<_> = checks
            .iter()
            .map(|c| json!({ "suite": c.suite, "check": c.name, "pass": c.pass, "detail": c.detail }))
            .collect();
        commands::Artifacts::new(&cfg)?.summary(&cfg, json!({ "checks": rows, "failed": failed }))?;
        return if failed == 0 { Ok(()) } else { Err(CliError::Validation { failed }) };
    }
    commands::run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kglab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
