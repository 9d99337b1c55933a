//! `svreg` command-line front end: JSON configs in, NPY volumes and JSON
//! reports out.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use config::Overrides;
use error::{CliError, CliResult};

pub const THREADS_ENV: &str = "SVREG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "svreg", version, about = "Diffeomorphic registration with spatially varying regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; falls back to SVREG_THREADS, then 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a moving image to a fixed image.
    Register,
    /// Generate synthetic scenario bundles.
    Synth,
    /// Tune prior hyperparameters over synthetic scenarios.
    Tune,
    /// Compute metrics for a stored displacement.
    Eval,
    /// Apply a stored displacement to an image or label map.
    Warp,
}

fn thread_count(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{THREADS_ENV}={s:?} is not a thread count")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Register => commands::register::run(&config, &overrides).map(drop),
        Command::Synth => commands::synth::run(&config, &overrides).map(drop),
        Command::Tune => commands::tune::run(&config, &overrides, threads).map(drop),
        Command::Eval => commands::eval::run(&config, &overrides).map(drop),
        Command::Warp => commands::warp::run(&config, &overrides).map(drop),
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("svreg: {e}");
            e.exit_code()
        }
    }
}
