use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmgva_cli::commands::{self, FitOverrides, PpsArgs, SampleArgs};
use cmgva_cli::config::Mode;
use cmgva_cli::error::{CliError, CliResult};

/// Boosted copula mixture variational approximation.
///
/// Set CMGVA_THREADS to fix the worker thread count.
#[derive(Parser, Debug)]
#[command(name = "cmgva", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit K = 1, 2, ... components and write checkpoints, traces and a summary.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Overrides [boost] seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// cmgva, gcopula (one component) or mixnorm (no transforms).
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Draw θ from a checkpoint, optionally with marginal densities on a grid.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid points per coordinate for marginal log densities.
        #[arg(long, default_value_t = 0)]
        grid: usize,
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Partial predictive score on a test CSV at the posterior mean.
    Pps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("CMGVA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("CMGVA_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Fit { config, seed, out, mode } => commands::fit(&config, &FitOverrides { seed, out, mode }),
        Command::Sample {
            checkpoint,
            draws,
            out,
            seed,
            grid,
            grid_out,
        } => commands::sample(&SampleArgs {
            checkpoint,
            draws,
            out,
            seed,
            grid,
            grid_out,
        }),
        Command::Pps {
            checkpoint,
            config,
            test,
            draws,
            seed,
            out,
        } => {
            let s = commands::predictive_score(&PpsArgs {
                checkpoint,
                config,
                test,
                draws,
                seed,
                out,
            })?;
            println!("{s}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
