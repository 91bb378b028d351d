//! Experiment harness for decentralized policy evaluation.
//!
//! Subcommands cover artifact generation (`gen`), trajectory collection
//! (`collect`), exact oracles (`oracle`), single solver runs (`solve`), the
//! two end-to-end experiments (`exp1`, `exp2`), parameter sweeps (`sweep`)
//! and the invariant suite (`verify`). All outputs are plain JSON/CSV files;
//! nothing is interactive.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::solve::Algorithm;
use config::{ExperimentConfig, ExperimentKind};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "FDPE_OUT";

#[derive(Parser)]
#[command(
    name = "fdpe",
    about = "Fully decentralized policy evaluation: simulator and experiment harness",
    version
)]
struct Cli {
    /// Path to a JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dotted-path overrides, e.g. --set solver.lambda=0.8.
    #[arg(long, global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (defaults to $FDPE_OUT or ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Scale the experiment to the full-size parameter set.
    #[arg(long, global = true)]
    full: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the MDP, target policy, features and topology files.
    Gen,
    /// Collect per-agent datasets from generated artifacts.
    Collect,
    /// Compute exact oracle quantities and bias/variance curves.
    Oracle,
    /// Run one solver over collected artifacts.
    Solve {
        #[arg(long, value_enum, default_value = "fdpe")]
        algorithm: Algorithm,
    },
    /// Grid-partition experiment: restricted exploration regions.
    Exp1,
    /// Random-MDP experiment: global state, local rewards.
    Exp2,
    /// Sweep one solver parameter across a value grid.
    Sweep,
    /// Run the invariant/property suite and report each property.
    Verify,
}

fn load_config(cli: &Cli, default: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => default,
    };
    if cli.full {
        cfg = cfg.full_scale();
    }
    cfg = cfg.apply_overrides(&cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = out_dir(cli);
    match &cli.command {
        Command::Gen => {
            let cfg = load_config(cli, ExperimentConfig::default())?;
            commands::gen::run(&cfg, &out)
        }
        Command::Collect => {
            let cfg = load_config(cli, ExperimentConfig::default())?;
            commands::collect_cmd::run(&cfg, &out)
        }
        Command::Oracle => {
            let cfg = load_config(cli, ExperimentConfig::default())?;
            commands::oracle_cmd::run(&cfg, &out)
        }
        Command::Solve { algorithm } => {
            let cfg = load_config(cli, ExperimentConfig::default())?;
            commands::solve::run(&cfg, &out, *algorithm)
        }
        Command::Exp1 => {
            let mut default = ExperimentConfig::desk_grid();
            default.experiment = ExperimentKind::GridPartition;
            let cfg = load_config(cli, default)?;
            commands::experiments::run(&cfg, &out, true)
        }
        Command::Exp2 => {
            let cfg = load_config(cli, ExperimentConfig::desk_marl())?;
            commands::experiments::run(&cfg, &out, false)
        }
        Command::Sweep => {
            let cfg = load_config(cli, ExperimentConfig::default())?;
            commands::sweep::run(&cfg, &out)
        }
        Command::Verify => {
            let cfg = load_config(cli, ExperimentConfig::default())?;
            commands::verify::run(cfg.seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Machine-readable failure report on stderr.
            let report = serde_json::json!({
                "error": format!("{err:#}"),
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
