use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ergovar_cli::{run, validate_with, RunError};

#[derive(Parser)]
#[command(name = "ergovar", version, about = "Numerical ergodic theory experiments from JSON run configurations")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Validate a configuration, run it and write its artifacts.
    Run {
        #[command(flatten)]
        input: Input,
        /// Cap on parallel sampling threads; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Validate a configuration without running it.
    Validate {
        #[command(flatten)]
        input: Input,
    },
    /// List systems, site functions, families and commands.
    Catalog,
}

#[derive(clap::Args)]
struct Input {
    /// JSON configuration file; `-` reads standard input. Omitted means `{}`.
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set N=2000` or `--set params.a=1.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn read_config(path: &Option<PathBuf>) -> anyhow::Result<String> {
    match path {
        None => Ok(String::new()),
        Some(p) if p.as_os_str() == "-" => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading configuration from stdin")?;
            Ok(s)
        }
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.action {
        Action::Catalog => {
            println!("commands: {}", ergovar_cli::config::COMMANDS.join(", "));
            println!("systems: {}", ergovar::maps::CATALOG.join(", "));
            println!("site functions: {}", ergovar::observables::SITE_CATALOG.join(", "));
            println!("families: {}", ergovar::devroye::FAMILY_CATALOG.join(", "));
            ExitCode::SUCCESS
        }
        Action::Validate { input } => {
            let text = match read_config(&input.config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            match validate_with(&text, &input.sets) {
                Ok(cfg) => {
                    println!("valid: {} on {} -> {}", cfg.command.name(), cfg.system.name(), cfg.artifact_stem());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
        Action::Run { input, workers } => {
            let text = match read_config(&input.config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            let result = validate_with(&text, &input.sets).map_err(RunError::from).and_then(|cfg| run(&cfg, workers));
            match result {
                Ok(outcome) => {
                    for l in &outcome.lines {
                        println!("{l}");
                    }
                    for p in &outcome.artifacts {
                        eprintln!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
