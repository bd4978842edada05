use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgfactor::commands::{self, Command, RunOptions};
use mgfactor::io::RunConfig;

/// Bayesian multi-group functional factor analysis.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for replicate-level parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scenario truth and replicated datasets.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the Gibbs sampler on one dataset or a directory of replicates.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV, or a directory of dataset_r<k>.csv files.
        #[arg(long)]
        data: PathBuf,
        /// Grid CSV; defaults to grid.csv next to the data.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Identify loadings and summarize curves from fit output.
    Postprocess {
        #[command(flatten)]
        common: Common,
        /// Fit directory (or a directory of r<k> fit directories).
        #[arg(long)]
        draws: PathBuf,
    },
    /// Compare postprocessed replicates with the simulation truth.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        results: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, command) = match cli.command {
        Cmd::Simulate { common } => (common, Command::Simulate),
        Cmd::Fit { common, data, grid } => (common, Command::Fit { data, grid }),
        Cmd::Postprocess { common, draws } => (common, Command::Postprocess { draws }),
        Cmd::Metrics { common, truth, results } => (common, Command::Metrics { truth, results }),
    };
    match execute(&command, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn execute(command: &Command, common: Common) -> mgfactor::Result<()> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| mgfactor::Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let (config, config_digest) = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => (RunConfig::default(), mgfactor::io::digest(b"")),
    };
    let opts = RunOptions {
        config,
        config_digest,
        seed: common.seed,
        out: common.out,
    };
    commands::run(command, &opts)?;
    Ok(())
}
