use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use microchannel::config::ExperimentConfig;
use microchannel::{experiment, Error};

#[derive(Parser)]
#[command(name = "microchannel", version, about = "Run microchannel experiments from a JSON configuration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed; overrides `seed` in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the configuration JSON schema.
    Schema,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidRequest(_) => 2,
        Error::CapacityExceeded { .. } => 3,
        Error::NumericalFailure { .. }
        | Error::NonConvergence { .. }
        | Error::AssemblyFailure { .. }
        | Error::NormalizationFailure { .. }
        | Error::DependentObservables { .. } => 4,
        _ => 1,
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out, seed } => {
            let (cfg, bytes) = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let seed = seed.unwrap_or(cfg.seed);
            let report = experiment::run(&cfg, &bytes, &out, seed)?;
            let failed: Vec<&str> = report
                .summary
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| c.name.as_str())
                .collect();
            println!("{}: wrote {} files to {}", cfg.experiment.name(), report.summary.files.len(), out.display());
            if failed.is_empty() {
                println!("all {} checks pass", report.summary.checks.len());
            } else {
                println!("checks outside their bounds: {}", failed.join(", "));
            }
        }
        Command::Validate { config } => {
            let (cfg, _) = ExperimentConfig::load(&config)?;
            println!("{}: valid {} configuration", config.display(), cfg.experiment.name());
        }
        Command::Schema => println!("{}", ExperimentConfig::schema()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
