//! `heavyball`: run, compare and verify heavy-ball optimizers from the shell.
//!
//! Exit status: 0 on success, 1 when an enabled check fails, 2 on usage,
//! configuration or I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heavyball::verify::Suite;
use heavyball::OptimizerKind;

use commands::RunEntry;
use config::RunFlags;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    ChecksFailed(Vec<String>),
    Runtime(String),
}

impl CliError {
    pub fn usage(e: heavyball::Error) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn runtime(e: heavyball::Error) -> Self {
        CliError::Runtime(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Usage(_) | CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "heavyball", version, about = "Heavy-ball momentum methods for nonsmooth convex problems")]
struct Cli {
    /// Directory for traces and summaries
    #[arg(long, env = "OPT_TRACE_DIR", default_value = ".", global = true)]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimizer and write its trace CSV and summary JSON
    Run {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long, value_parser = parse_optimizer)]
        optimizer: Option<OptimizerKind>,
    },
    /// Run several optimizers on one problem and write a wide gap CSV
    Compare {
        #[command(flatten)]
        flags: RunFlags,
        /// KIND:ALPHA[:BETA], repeatable
        #[arg(long = "run")]
        runs: Vec<RunEntry>,
        /// Full JSON run configurations, one per run
        #[arg(long, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Wide CSV path
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the seeded invariant suites
    Verify {
        #[arg(value_parser = Suite::NAMES, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic LibSVM dataset
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        features: usize,
        #[arg(long, default_value_t = 10)]
        nnz: usize,
        #[arg(long, default_value_t = 0.1)]
        flip: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: heavyball::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { flags, optimizer } => commands::cmd_run(flags, *optimizer, &cli.out_dir),
        Command::Compare {
            flags,
            runs,
            configs,
            output,
        } => commands::cmd_compare(flags, runs, configs, output.as_deref(), &cli.out_dir),
        Command::Verify { suite, seed } => commands::cmd_verify(suite.parse().expect("validated by clap"), *seed),
        Command::Synth {
            output,
            samples,
            features,
            nnz,
            flip,
            seed,
        } => commands::cmd_synth(output, *samples, *features, *nnz, *flip, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("error: {m}"),
                CliError::ChecksFailed(names) => eprintln!("failed checks: {}", names.join(", ")),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
