//! The `pairtrade` command line: tables, simulations and self-checks for the
//! explicit consumption–investment solution of OU spread trading.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pairtrade_core::Error;

#[derive(Debug, Parser)]
#[command(name = "pairtrade", version, about)]
struct Cli {
    /// Flat `key = value` config file; must then define r, kappa, sigma,
    /// gamma, beta and T unless given as flags. Without it the reference
    /// parameters r=0.02 kappa=1 sigma=0.3 gamma=0.5 beta=1 T=1 are used.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long = "T", global = true, value_name = "T")]
    horizon: Option<f64>,
    /// Write the main artifact to this directory instead of stdout.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// q, g and f over a (t, theta) grid. CSV header: t,theta,q,g,f
    RiccatiTable {
        /// Points per axis.
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// u and derived quantities on an (s, t) grid. CSV header: s,t,u,u_s,z_at_x1,R
    ValueSurface(SurfaceArgs),
    /// Optimal controls at unit wealth. CSV header: s,t,R,a_at_x1,c_at_x1,F
    PolicyTable(SurfaceArgs),
    /// Monte Carlo estimate of the objective for one policy; JSON-lines summary.
    Simulate(SimulateArgs),
    /// Optimal against perturbed policies.
    /// CSV header: policy,a_mult,c_mult,mean,std_error,z_minus_mean,passed
    OptimalityTest(OptimalityArgs),
    /// Crank–Nicolson solution against the closed form, with a refinement study.
    VerifyPde(PdeArgs),
    /// Residual of the nonlinear HJB equation at unit wealth.
    VerifyHjb(HjbArgs),
    /// The complete battery of self-checks.
    VerifyAll(VerifyAllArgs),
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    /// Half-width of the spread grid (default 3, rescaled for non-reference parameters).
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 41)]
    s_points: usize,
    #[arg(long, default_value_t = 11)]
    t_points: usize,
}

#[derive(Debug, Args, Clone)]
struct SimArgs {
    /// Number of paths (default 100000).
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps per path (default 500).
    #[arg(long)]
    steps: Option<usize>,
    /// Seed of the random streams (default 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Initial wealth (default 1).
    #[arg(long)]
    x0: Option<f64>,
    /// Initial spread (default 0.5).
    #[arg(long)]
    s0: Option<f64>,
    /// Initial time (default 0).
    #[arg(long)]
    t0: Option<f64>,
    /// Number of independent random streams; fixes the work partition (default 64).
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Log)]
    scheme: SchemeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// Euler on log-wealth.
    Log,
    /// Euler on wealth, absorbed at zero.
    Level,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Optimal,
    Scaled,
    ZeroPosition,
    NoConsumption,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::Optimal)]
    policy: PolicyArg,
    /// Position multiplier; implies `--policy scaled`.
    #[arg(long)]
    a_mult: Option<f64>,
    /// Consumption multiplier; implies `--policy scaled`.
    #[arg(long)]
    c_mult: Option<f64>,
    /// Per-path CSV (header: path,objective,terminal_wealth).
    #[arg(long, value_name = "FILE")]
    paths_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimalityArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Allowance for time-discretisation bias of the optimal estimate.
    #[arg(long, default_value_t = pairtrade_core::verify::MC_BIAS_ALLOWANCE)]
    bias: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundaryArg {
    ClosedForm,
    ZeroCurvature,
}

#[derive(Debug, Args)]
struct PdeArgs {
    /// Spatial points (default 801).
    #[arg(long)]
    n_s: Option<usize>,
    /// Time steps (default 800).
    #[arg(long)]
    n_t: Option<usize>,
    /// Half-width of the PDE domain (default 4, rescaled for non-reference parameters).
    #[arg(long)]
    extent: Option<f64>,
    /// Half-width of the compared region (default half the domain).
    #[arg(long)]
    interior: Option<f64>,
    #[arg(long, value_enum, default_value_t = BoundaryArg::ClosedForm)]
    boundary: BoundaryArg,
    /// Deviation field of the coarse grid (header: s,t,pde,closed_form,relative).
    #[arg(long, value_name = "FILE")]
    deviation_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HjbArgs {
    /// Half-width of the spread grid (default 3, rescaled for non-reference parameters).
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 31)]
    s_points: usize,
    #[arg(long, default_value_t = 21)]
    t_points: usize,
    /// Residual field (header: s,t,z,residual,inflated_residual).
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyAllArgs {
    /// Monte Carlo paths (default 100000).
    #[arg(long)]
    paths: Option<usize>,
    /// Monte Carlo steps (default 500).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Why a run stopped; decides the exit status.
#[derive(Debug)]
enum Failure {
    /// Bad flags, config or output location.
    Usage(String),
    /// A tolerance check failed.
    Check(String),
    /// Numerical trouble during a run.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Param(_) | Error::Config(_) | Error::Domain(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// Worker cap requested through `PAIRTRADE_THREADS`; `None` when unset or 0.
pub fn thread_cap() -> Result<Option<usize>, String> {
    let Ok(raw) = std::env::var("PAIRTRADE_THREADS") else {
        return Ok(None);
    };
    match raw.trim().parse::<usize>() {
        Ok(0) => Ok(None),
        Ok(n) => Ok(Some(n)),
        Err(_) => Err(format!("PAIRTRADE_THREADS must be a non-negative integer, got `{raw}`")),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status: 0 success, 1 failed check or numerical failure, 2 usage or
/// configuration error.
pub fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
