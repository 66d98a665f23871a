//! Command-line entry point. Each subcommand reads one JSON config,
//! runs its computation, and writes artifacts to the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hardyheat::cli::{
    cmd_blowup, cmd_check, cmd_evolve, cmd_spectrum, load_config, CliError, DEFAULT_SEED,
};

#[derive(Debug, Parser)]
#[command(name = "hardyheat", about = "Weighted Gaussian eigenbasis and backward evolution runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Path to the JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output_dir from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for randomized property families; a seed in the config
    /// takes precedence.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads for the sector solves; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the sector problems and write the eigenbasis table.
    Spectrum(Common),
    /// Integrate the backward evolution and write the trace.
    Evolve(Common),
    /// Extract blow-up profile coordinates over the scale grid.
    Blowup(Common),
    /// Run the inequality and consistency suites.
    Check(Common),
}

fn run(command: &Command) -> Result<bool, CliError> {
    let common = match command {
        Command::Spectrum(c) | Command::Evolve(c) | Command::Blowup(c) | Command::Check(c) => c,
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        // a repeated build_global in one process keeps the first pool;
        // that only happens in tests driving run() directly
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let config = load_config(&common.config)?;
    let out_dir = common
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let seed = config.seed.unwrap_or(common.seed);
    match command {
        Command::Spectrum(_) => cmd_spectrum(&config, &out_dir).map(|()| true),
        Command::Evolve(_) => cmd_evolve(&config, &out_dir).map(|()| true),
        Command::Blowup(_) => cmd_blowup(&config, &out_dir).map(|()| true),
        Command::Check(_) => cmd_check(&config, &out_dir, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
