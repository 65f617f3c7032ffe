//! `zigzag`: sample, build controls, and run drift/growth/estimation
//! diagnostics from the command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical fault, 1 I/O failure.

mod commands;
mod expr;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use zigzag_core::simulate::DEFAULT_MAX_EVENTS;
use zigzag_core::Method;

#[derive(Parser)]
#[command(name = "zigzag", version, about = "Zigzag process sampler and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a skeleton and write it as CSV.
    Sample(SampleArgs),
    /// Build an admissible control between two states of a Gaussian target.
    Reach(ReachArgs),
    /// Scan the Lyapunov drift ratio on a radial grid.
    Drift(DriftArgs),
    /// Probe the growth of the potential and its derivatives.
    Growth(GrowthArgs),
    /// Batch-means estimate of an ergodic average.
    Estimate(EstimateArgs),
}

#[derive(Args, Serialize, Clone, Debug)]
pub struct SimArgs {
    /// Target config: inline JSON or a path to a JSON file.
    #[arg(long)]
    pub target: String,
    /// Time horizon.
    #[arg(long = "T", value_name = "T")]
    pub horizon: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "auto")]
    pub method: Method,
    /// Thinning window length.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    /// Constant excess switching rate.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Initial position as comma-separated values (default: origin).
    #[arg(long, allow_hyphen_values = true)]
    pub init: Option<String>,
    /// Initial velocity as comma-separated ±1 (default: all +1).
    #[arg(long = "init-theta", allow_hyphen_values = true)]
    pub init_theta: Option<String>,
    #[arg(long = "max-events", default_value_t = DEFAULT_MAX_EVENTS)]
    pub max_events: usize,
}

#[derive(Args, Serialize, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Skeleton CSV path; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Debug)]
pub struct ReachArgs {
    /// Gaussian target config: inline JSON or a path.
    #[arg(long)]
    pub target: String,
    #[arg(long = "from-x", allow_hyphen_values = true)]
    pub from_x: String,
    #[arg(long = "from-theta", allow_hyphen_values = true)]
    pub from_theta: String,
    #[arg(long = "to-x", allow_hyphen_values = true)]
    pub to_x: Option<String>,
    #[arg(long = "to-theta", allow_hyphen_values = true)]
    pub to_theta: Option<String>,
    /// Check this control JSON instead of constructing one.
    #[arg(long)]
    pub control: Option<PathBuf>,
    /// Initial travel time for the doubling search.
    #[arg(long = "t-init", default_value_t = 1.0)]
    pub t_init: f64,
    /// Control JSON path; the report and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Debug)]
pub struct DriftArgs {
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Constant excess rate; also used as the bound γ̄.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long = "r-min", default_value_t = 10.0)]
    pub r_min: f64,
    #[arg(long = "r-max", default_value_t = 100.0)]
    pub r_max: f64,
    #[arg(long = "n-radial", default_value_t = 16)]
    pub n_radial: usize,
    #[arg(long = "n-angular", default_value_t = 64)]
    pub n_angular: usize,
    /// Report JSON path; the grid CSV and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Debug)]
pub struct GrowthArgs {
    #[arg(long)]
    pub target: String,
    /// Comma-separated increasing radii (overrides the geometric grid).
    #[arg(long)]
    pub radii: Option<String>,
    #[arg(long = "r-min", default_value_t = 10.0)]
    pub r_min: f64,
    #[arg(long = "r-max", default_value_t = 1000.0)]
    pub r_max: f64,
    #[arg(long = "n-radial", default_value_t = 8)]
    pub n_radial: usize,
    #[arg(long = "n-angular", default_value_t = 64)]
    pub n_angular: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Test function, e.g. `x1`, `x1^2 + x2^2`, `cos(x1) * th1`.
    #[arg(long, default_value = "x1", allow_hyphen_values = true)]
    pub g: String,
    #[arg(long, default_value_t = zigzag_core::estimate::DEFAULT_BATCHES)]
    pub batches: usize,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Result JSON path; the replicate CSV and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Numerical(m) => write!(f, "numerical fault: {m}"),
            Failure::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::Reach(a) => commands::reach(a),
        Command::Drift(a) => commands::drift(a),
        Command::Growth(a) => commands::growth(a),
        Command::Estimate(a) => commands::estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
