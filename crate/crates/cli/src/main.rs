//! `ope`: simulate logged-bandit data, evaluate estimators, run Monte Carlo studies.
//!
//! Exit codes: 0 success, 1 unexpected, 2 invalid input or config,
//! 3 precondition not met (e.g. dominance check with β* = V), 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ope_core::io::{self, Bounds, EvaluateOptions, SimulateSource, OUT_DIR_ENV};
use ope_core::simulator::PRESETS;
use ope_core::{CrossFitConfig, Error};

#[derive(Parser)]
#[command(
    name = "ope",
    version,
    about = "Off-policy evaluation with baseline-corrected importance sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List built-in environments.
    Presets,
    /// Sample a JSONL log from a preset or an environment config.
    Simulate(SimulateArgs),
    /// Compute estimates and diagnostics for a JSONL log.
    Evaluate(EvaluateArgs),
    /// Run a study described by a TOML config; writes <stem>.csv and <stem>.json.
    Study(StudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// TOML file with an [environment] table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated, e.g. `ips,snips,beta-star-ips` or `ipm,snipm,beta-perp-star-ipm`.
    #[arg(long, value_delimiter = ',', default_value = "ips,snips,beta-star-ips")]
    estimators: Vec<String>,
    #[arg(long)]
    gap: bool,
    #[arg(long)]
    remainder: bool,
    /// V(π); for ranked logs one value per position, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    true_value: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the log header; requires --weight-bound.
    #[arg(long, requires = "weight_bound")]
    reward_bound: Option<f64>,
    #[arg(long, requires = "reward_bound")]
    weight_bound: Option<f64>,
}

#[derive(Args)]
struct StudyArgs {
    config: PathBuf,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::PreconditionNotMet(_) => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Presets => {
            for (name, about) in PRESETS {
                println!("{name:<18}{about}");
            }
        }
        Command::Simulate(a) => {
            let source = match (&a.preset, &a.config) {
                (Some(p), _) => SimulateSource::Preset(p),
                (None, Some(c)) => SimulateSource::Config(c),
                (None, None) => unreachable!("clap enforces one source"),
            };
            let manifest = io::simulate_command(source, a.n, a.seed, &a.out)?;
            let mut sidecar = a.out.clone().into_os_string();
            sidecar.push(".manifest.json");
            io::write_atomic(
                &PathBuf::from(sidecar),
                serde_json::to_string_pretty(&manifest)
                    .expect("manifest serialises")
                    .as_bytes(),
            )?;
            eprintln!("wrote {} records to {}", a.n, a.out.display());
        }
        Command::Evaluate(a) => {
            let bounds = match (a.reward_bound, a.weight_bound) {
                (Some(r), Some(w)) => Some(Bounds {
                    reward_bound: r,
                    weight_bound: w,
                }),
                _ => None,
            };
            let log = io::read_logs(&a.input, bounds)?;
            let opts = EvaluateOptions {
                estimators: a.estimators,
                gap: a.gap,
                remainder: a.remainder,
                true_values: a.true_value,
                folds: CrossFitConfig {
                    folds_k: a.folds,
                    seed: a.seed,
                },
            };
            let doc = io::evaluate(&log, &opts)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).expect("report serialises")
            );
        }
        Command::Study(a) => {
            let out = io::study_command(&a.config, &a.out_dir)?;
            println!("{}", out.csv_path.display());
            println!("{}", out.json_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
