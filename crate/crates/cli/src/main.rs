use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topsim_cli::commands;
use topsim_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "topsim", version, about = "Traveling officer simulation, baselines and training")]
struct Cli {
    /// TOML run configuration; the desk benchmark when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// `key.path=value`, applied in order after the config file.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll policies over a split and write traces and a summary.
    Simulate {
        /// random, greedy, aco or checkpoint; repeatable.
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the Q network, then evaluate it on the test split.
    Train {
        /// Ignore any saved trainer state.
        #[arg(long)]
        fresh: bool,
    },
    /// Evaluate a checkpoint next to the configured baselines.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Option<String>,
    },
    /// Aggregate run summaries into a results table.
    Report { runs: Vec<PathBuf> },
    /// Train/validation/test day counts for a year.
    SplitInfo {
        #[arg(long)]
        year: i32,
    },
    /// Write the configured synthetic data as plain files.
    GenSynth,
}

fn load(cli: &Cli, extra: Vec<String>) -> CliResult<RunConfig> {
    let mut overrides = cli.overrides.clone();
    overrides.extend(extra);
    RunConfig::load(cli.config.as_deref(), &overrides, cli.seed)
}

fn quoted_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate {
            policies,
            split,
            checkpoint,
        } => {
            let mut extra = Vec::new();
            if !policies.is_empty() {
                extra.push(format!("simulate.policies={}", quoted_list(policies)));
            }
            if let Some(s) = split {
                extra.push(format!("simulate.split={s:?}"));
            }
            if let Some(c) = checkpoint {
                extra.push(format!("simulate.checkpoint={:?}", c.display().to_string()));
            }
            let cfg = load(cli, extra)?;
            let dir = commands::simulate(&cfg, &cli.out)?;
            print!("{}", commands::report(&[dir.clone()])?.to_text());
            println!("wrote {}", dir.display());
        }
        Command::Train { fresh } => {
            let cfg = load(cli, Vec::new())?;
            let dir = commands::train(&cfg, &cli.out, *fresh)?;
            print!("{}", commands::report(&[dir.clone()])?.to_text());
            println!("wrote {}", dir.display());
        }
        Command::Evaluate { checkpoint, split } => {
            let extra = split.iter().map(|s| format!("simulate.split={s:?}")).collect();
            let cfg = load(cli, extra)?;
            let dir = commands::evaluate(&cfg, &cli.out, checkpoint)?;
            print!("{}", commands::report(&[dir.clone()])?.to_text());
            println!("wrote {}", dir.display());
        }
        Command::Report { runs } => {
            let table = commands::report(runs)?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("results.csv");
            std::fs::write(&path, table.to_csv()?)?;
            print!("{}", table.to_text());
            println!("wrote {}", path.display());
        }
        Command::SplitInfo { year } => print!("{}", commands::split_info(*year)?),
        Command::GenSynth => {
            let cfg = load(cli, Vec::new())?;
            let dir = commands::gen_synth(&cfg, &cli.out)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
