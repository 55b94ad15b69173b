//! Command-line driver: loads scenarios, runs solves, simulations and
//! sweeps, and writes CSV artifacts with a JSON manifest.

pub mod args;
pub mod cache;
pub mod commands;
pub mod manifest;

use anyhow::{Context, Result};

pub use args::{Cli, Command};
pub use commands::Outcome;

/// Environment variable holding the worker thread count.
pub const THREADS_VAR: &str = "MFSG_THREADS";

/// Sizes the global worker pool from [`THREADS_VAR`] when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(text) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{text}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the worker pool")
}

/// Runs one subcommand.
pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Convergence(a) => commands::convergence(a),
    }
}
