use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convhom::config::{render, ExperimentConfig};
use convhom::runner::{self, RunOptions, OUTPUT_ROOT_ENV};
use convhom::Error;

/// Homogenization experiments for random-in-time convolution equations.
#[derive(Parser)]
#[command(name = "convhom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment file and write its run directory.
    Run {
        config: PathBuf,
        /// Replaces the seed of the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for replica parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Run directory; defaults to `<root>/<output or file stem>`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Root for run directories.
        #[arg(long, env = OUTPUT_ROOT_ENV, hide_env_values = true)]
        output_root: Option<PathBuf>,
    },
    /// Check an experiment file without running it.
    Validate { config: PathBuf },
    /// Summarize a run directory.
    Report { dir: PathBuf },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, workers, output, output_root } => {
            let opts = RunOptions { seed, workers, output, output_root };
            match runner::run(&config, &opts) {
                Ok(out) => {
                    println!("{}", out.dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok((cfg, text)) => {
                let diags = cfg.validate(&text);
                if diags.is_empty() {
                    println!("{}: ok ({:?})", config.display(), cfg.kind);
                    ExitCode::SUCCESS
                } else {
                    eprintln!("{}", render(&config, &diags));
                    ExitCode::from(1)
                }
            }
            Err(e) => fail(e),
        },
        Command::Report { dir } => match runner::report(&dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
