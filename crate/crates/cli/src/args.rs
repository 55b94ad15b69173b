//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mfsg_core::simulate::Mode;

#[derive(Debug, Parser)]
#[command(
    name = "mfsg",
    version,
    about = "Solve and simulate linear-quadratic mean-field Stackelberg games"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Riccati equations and export every path.
    Solve(SolveArgs),
    /// Simulate a Monte-Carlo ensemble and compare costs with the limits.
    Simulate(SimulateArgs),
    /// Sweep the leader tracking weight and compare the two strategy classes.
    Sweep(SweepArgs),
    /// Measure how the state-average gap shrinks with the population size.
    Convergence(ConvergenceArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Convergence(_) => "convergence",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Solve(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Convergence(a) => &a.common,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file; the built-in scalar scenario is used when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Strategy class: openloop or feedback.
    #[arg(long, default_value = "openloop")]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Strategy class: openloop or feedback.
    #[arg(long, default_value = "openloop")]
    pub mode: Mode,
    /// Number of followers, overriding the config value.
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    /// Number of Monte-Carlo runs, overriding the config value.
    #[arg(long)]
    pub mc: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of followers, overriding the config value.
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    /// Number of paired Monte-Carlo runs per point, overriding the config value.
    #[arg(long)]
    pub mc: Option<usize>,
    /// Number of evenly spaced leader weights.
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    /// Leader weight range `MIN:MAX`.
    #[arg(
        long = "gamma0-range",
        value_name = "MIN:MAX",
        default_value = "0:5",
        allow_hyphen_values = true,
        value_parser = parse_range
    )]
    pub gamma0_range: (f64, f64),
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Strategy class: openloop or feedback.
    #[arg(long, default_value = "openloop")]
    pub mode: Mode,
    /// Comma-separated population sizes.
    #[arg(
        long = "N",
        value_name = "N,...",
        value_delimiter = ',',
        default_value = "10,40,160"
    )]
    pub n: Vec<usize>,
    /// Number of Monte-Carlo runs per population size, overriding the config value.
    #[arg(long)]
    pub mc: Option<usize>,
}

/// Parses `MIN:MAX` with `MIN ≤ MAX`.
pub fn parse_range(text: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got `{text}`"))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{s}` is not a finite number"))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo > hi {
        return Err(format!("range minimum {lo} exceeds maximum {hi}"));
    }
    Ok((lo, hi))
}
