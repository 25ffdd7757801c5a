mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dhmpc", version, about = "Time-coarsened MPC: solve, coarsen, sensitivity and closed-loop studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve an instance at full resolution.
    Solve(SolveArgs),
    /// Coarsen an instance on a grid, solve the coarse problem and project back.
    Coarsen(CoarsenArgs),
    /// Monte Carlo sensitivity of the first-stage solution to windowed data noise.
    Sensitivity(SensitivityArgs),
    /// Receding-horizon comparison of full and coarse controllers.
    Closedloop(ClosedLoopArgs),
    /// Generate a benchmark instance and its data profiles.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    Full,
    Equal,
    Fts,
    Diffusing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    /// Zero primal-dual guess.
    Zero,
    /// Exact full-resolution primal-dual solution.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LoopPriorArg {
    Zero,
    Shifted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    Hvac,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Solution CSV; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CoarsenArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub grid: GridArg,
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Keep stage 1 as a singleton block.
    #[arg(long)]
    pub guard: bool,
    #[arg(long, value_enum, default_value = "zero")]
    pub prior: PriorArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// HVAC benchmark configuration shared by the generating subcommands.
#[derive(Args, Debug, Clone)]
pub struct HvacArgs {
    #[arg(long, value_enum, default_value = "hvac")]
    pub bench: BenchKind,
    /// HvacConfig JSON; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the time-of-use tariff configuration.
    #[arg(long, conflicts_with = "config")]
    pub tou: bool,
    /// Real data profiles replacing the synthetic ones.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub nsim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    /// Instance JSON; when absent the HVAC benchmark is generated.
    #[arg(long, conflicts_with_all = ["config", "tou", "profiles"])]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub hvac: HvacArgs,
    /// Instance seed (benchmark only).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Experiment spec JSON `{windows, channels, samples, seed}`; overrides the flags below.
    #[arg(long)]
    pub experiment: Option<PathBuf>,
    /// Comma-separated 1-based inclusive windows such as `1-72,73-144`; default: four equal quarters.
    #[arg(long)]
    pub windows: Option<String>,
    /// Comma-separated 1-based `w` channels to perturb.
    #[arg(long, default_value = "1,5,6")]
    pub channels: String,
    #[arg(long, default_value_t = 300.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 7)]
    pub experiment_seed: u64,
    /// Stages whose deviations go to `samples.csv`, e.g. `1,2`.
    #[arg(long, default_value = "1")]
    pub sample_stages: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClosedLoopArgs {
    #[command(flatten)]
    pub hvac: HvacArgs,
    #[arg(long, default_value = "full,equal,fts,diffusing")]
    pub schemes: String,
    #[arg(long = "K", default_value_t = 30)]
    pub k: usize,
    /// Drop the leading singleton blocks.
    #[arg(long)]
    pub no_guard: bool,
    #[arg(long, value_enum, default_value = "zero")]
    pub prior: LoopPriorArg,
    #[arg(long, default_value_t = 1)]
    pub scenarios: usize,
    /// Scenario `j` uses seed `seed + j`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write one trace CSV per scenario and controller.
    #[arg(long)]
    pub traces: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub hvac: HvacArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Bad invocation; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("DHMPC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("DHMPC_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|_| commands::dispatch(&cli, &argv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
