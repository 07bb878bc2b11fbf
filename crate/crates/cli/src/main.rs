//! `nsplit`: run, sweep and validate hybrid transport configurations.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Overrides;
use failure::{Failure, Kind};

#[derive(Debug, Parser)]
#[command(name = "nsplit", version, about = "Collision-split hybrid MC / S_N transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory for output files; overrides `output.dir`.
    #[arg(long, global = true, env = "NSPLIT_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Base seed; overrides `hybrid.seed`.
    #[arg(long, global = true, env = "NSPLIT_SEED")]
    seed: Option<u64>,

    /// Sum tallies in a fixed order so outputs are bit-reproducible.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One steady-state or time-dependent solve.
    Run { config: PathBuf },
    /// Convergence sweep over the `[sweep]` axes.
    Sweep { config: PathBuf },
    /// Check a config and print it with defaults filled in.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(match f.kind {
                Kind::Solver => 1,
                Kind::Config => 2,
                Kind::Balance => 3,
                Kind::Io => 4,
            })
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(Some("--threads".into()), e))?;
    }
    let overrides = Overrides {
        out_dir: cli.out_dir.clone(),
        seed: cli.seed,
        deterministic: cli.deterministic,
    };
    let (Command::Run { config } | Command::Sweep { config } | Command::Validate { config }) =
        &cli.command;
    let prepared = commands::prepare(config::load(config)?, &overrides)?;
    match cli.command {
        Command::Run { .. } => commands::run(&prepared),
        Command::Sweep { .. } => commands::sweep(&prepared),
        Command::Validate { .. } => commands::validate(&prepared),
    }
}
