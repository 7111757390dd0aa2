use std::path::PathBuf;
use std::process::ExitCode;

use aoi_core::policies::PolicyKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use error::CliError;

/// Age-of-information scheduling experiments for two-hop networks.
#[derive(Parser, Debug)]
#[command(name = "aoisim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the lower bound, its per-source rates and the optimality ratio.
    LowerBound(Common),
    /// Print the optimal randomized scheduling probabilities and their EWSAoI.
    Randomized(Common),
    /// Run one episode per policy on the base network.
    Simulate(Common),
    /// Run the configured sweep and write CSV results plus a manifest.
    Sweep(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Slots per episode.
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Episodes per sweep point and policy.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated policies, e.g. randomized,mw-e.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<PolicyKind>>,
    /// Dump estimator traces for the first N slots (simulate only).
    #[arg(long, value_name = "SLOTS")]
    pub trace: Option<u64>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, f): (&Common, fn(&commands::Context) -> Result<(), CliError>) = match &cli.command
    {
        Command::LowerBound(c) => (c, commands::lower_bound),
        Command::Randomized(c) => (c, commands::randomized),
        Command::Simulate(c) => (c, commands::simulate),
        Command::Sweep(c) => (c, commands::sweep),
    };
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let ctx = commands::Context::new(common)?;
    f(&ctx)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
