mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vgfne", version, about = "Feedback Nash equilibrium seeking for linear stochastic games")]
struct Cli {
    /// Cap on worker threads; 0 uses every core.
    #[arg(long, global = true, env = "VGFNE_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a power-grid game spec.
    Grid(GridArgs),
    /// Check a spec against the standing assumptions.
    Validate {
        spec: PathBuf,
    },
    /// Run equilibrium seeking and write the response, log and constants.
    Seek(SeekArgs),
    /// Simulate closed and open loop under the same noise.
    Simulate(SimulateArgs),
    /// Impulse responses per noise channel plus a first-reaction table.
    Impulse(ImpulseArgs),
    /// Generate, seek with live simulation and report, end to end.
    BenchGrid(BenchGridArgs),
}

#[derive(Debug, Args, Clone)]
pub struct GridShape {
    #[arg(long, default_value_t = 3)]
    pub rows: usize,
    #[arg(long, default_value_t = 3)]
    pub cols: usize,
    /// Parameter seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// FIR horizon N.
    #[arg(long, default_value_t = 16)]
    pub horizon: usize,
    /// Chance level of the bus limits.
    #[arg(long, default_value_t = 0.975)]
    pub rho: f64,
    #[arg(long, default_value_t = 1)]
    pub actuation_delay: usize,
    #[arg(long, default_value_t = 1)]
    pub communication_delay: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub shape: GridShape,
    /// Output spec file.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SeekFlags {
    /// Fixed step size; defaults to M/L^2.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Relative step at which seeking stops.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_updates: usize,
    /// Write the response every this many updates; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Initial ADMM penalty.
    #[arg(long, default_value_t = 1.0)]
    pub admm_rho: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub admm_tol: f64,
}

#[derive(Debug, Args)]
pub struct SeekArgs {
    pub spec: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Override the FIR horizon N.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Override the chance level.
    #[arg(long)]
    pub rho: Option<f64>,
    #[command(flatten)]
    pub flags: SeekFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub spec: PathBuf,
    pub response: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run without any disturbance.
    #[arg(long)]
    pub zero_noise: bool,
}

#[derive(Debug, Args)]
pub struct ImpulseArgs {
    pub spec: PathBuf,
    pub response: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Noise channels to excite; all of them when omitted.
    #[arg(long = "channel")]
    pub channels: Vec<usize>,
    /// Steps per trace; defaults to N + 10.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchGridArgs {
    #[command(flatten)]
    pub shape: GridShape,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Simulation length T.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Simulation steps between seeker updates.
    #[arg(long, default_value_t = 10)]
    pub delta_k: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 1)]
    pub noise_seed: u64,
    #[command(flatten)]
    pub flags: SeekFlags,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Grid(a) => commands::grid(&a),
        Command::Validate { spec } => commands::validate(&spec),
        Command::Seek(a) => commands::seek(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Impulse(a) => commands::impulse(&a),
        Command::BenchGrid(a) => commands::bench_grid(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
