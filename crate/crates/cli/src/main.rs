//! `hetero-melnikov` command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 on input or I/O errors, 2 when a
//! named assumption fails or persistence is not certified.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "hetero-melnikov",
    version,
    about = "Persistence of heteroclinic orbits in piecewise-smooth slow-fast systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check endpoints, transversality and the dichotomy; write orbit data.
    Analyze(CommonArgs),
    /// Compute the Melnikov matrix in both forms and the rank verdict.
    Melnikov(CommonArgs),
    /// Shoot finite-eps connections and compare with the frozen root.
    Verify(CommonArgs),
    /// Verify, then map feasibility and persistence over a (c, kappa) grid.
    Sweep(SweepArgs),
    /// Run analyze, melnikov and verify on the preset and save its spec.
    Example(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON spec file.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in system, used when no spec is given.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated eps values for verify.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Tolerance overrides as `key=value`, comma-separated or repeated.
    #[arg(long = "tol-overrides", value_delimiter = ',')]
    pub tol_overrides: Vec<String>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed recorded in every report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Slow value at which to evaluate instead of searching for the root (m = 1).
    #[arg(long, allow_hyphen_values = true)]
    pub y0: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated switching levels.
    #[arg(long, value_delimiter = ',')]
    pub c_values: Option<Vec<f64>>,
    /// Comma-separated half-widths of the coefficient range.
    #[arg(long, value_delimiter = ',')]
    pub kappa_values: Option<Vec<f64>>,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("HETERO_MELNIKOV_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Analyze(c) => ("analyze", c),
        Command::Melnikov(c) => ("melnikov", c),
        Command::Verify(c) => ("verify", c),
        Command::Sweep(s) => ("sweep", &s.common),
        Command::Example(c) => ("example", c),
    };
    let cfg = match RunConfig::from_args(name, common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(w) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            eprintln!("error: cannot start {w} workers: {e}");
            return ExitCode::from(1);
        }
    }
    let code = match &cli.command {
        Command::Analyze(_) => commands::analyze(&cfg),
        Command::Melnikov(_) => commands::melnikov(&cfg),
        Command::Verify(_) => commands::verify(&cfg),
        Command::Sweep(s) => commands::sweep(&cfg, s.c_values.clone(), s.kappa_values.clone()),
        Command::Example(_) => commands::example(&cfg),
    };
    ExitCode::from(code)
}
