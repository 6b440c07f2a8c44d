use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod check;
mod error;
mod extract;
mod instanton;
mod output;
mod scan;

use error::{CliError, CliResult};
use output::{load_json, load_optional, OutDir};

/// Splicing, scaling scans and bubble-tree extraction for SU(2) instantons.
#[derive(Debug, Parser)]
#[command(name = "asdglue", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// JSON grid: a radial grid spec for `instanton`, tree-grid options for
    /// `scan` and `extract`.
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for the randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "ASDGLUE_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Energy, centre, scale, tails and ASD residual of one connection.
    Instanton,
    /// Derivative and self-dual error scaling across a λ grid.
    Scan,
    /// Bubble-tree extraction from a degenerating family.
    Extract,
    /// Seeded invariant suite.
    Check {
        #[arg(long, hide = true)]
        inject_bad_cutoff: bool,
    },
}

fn config_path(cli: &Cli) -> CliResult<&std::path::Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs --config <path>".into()))
}

fn set_threads(n: Option<usize>) -> CliResult<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult<Vec<String>> {
    set_threads(cli.threads)?;
    match &cli.command {
        Command::Instanton => {
            let cfg = load_optional(cli.config.as_deref())?.unwrap_or_default();
            let grid = load_optional(cli.grid.as_deref())?;
            instanton::run(&cfg, grid, &OutDir::create(&cli.out)?)
        }
        Command::Scan => {
            let cfg = load_json(config_path(cli)?)?;
            let grid = load_optional(cli.grid.as_deref())?;
            scan::run(&cfg, grid, &OutDir::create(&cli.out)?)
        }
        Command::Extract => {
            let cfg = load_json(config_path(cli)?)?;
            let grid = load_optional(cli.grid.as_deref())?;
            extract::run(&cfg, grid, &OutDir::create(&cli.out)?)
        }
        Command::Check { inject_bad_cutoff } => {
            check::run(cli.seed, *inject_bad_cutoff, &OutDir::create(&cli.out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            for f in &failed {
                eprintln!("tolerance failure: {f}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
