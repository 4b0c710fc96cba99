//! `rgi`: generate datasets, train, evaluate and inspect room-geometry models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "rgi",
    version,
    about = "Room geometry inference from multichannel impulse responses"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Key-value file (`key = value` per line) supplying default flag values;
    /// explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "RGI_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate rooms and write a binary dataset with a JSON manifest.
    Generate(GenerateArgs),
    /// Train the estimator and write a checkpoint plus a loss history CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write the metrics table as CSV.
    Evaluate(EvaluateArgs),
    /// Dump one sample's responses or image sources as CSV.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["out", "plan"])))]
pub struct GenerateArgs {
    /// Output dataset file.
    #[arg(long, value_name = "FILE", conflicts_with = "plan")]
    pub out: Option<PathBuf>,
    /// Samples per shape family.
    #[arg(long, default_value_t = 10, conflicts_with_all = ["counts", "plan"])]
    pub per_family: usize,
    /// Samples per family as shoebox,pentagonal,hexagonal,l_shaped.
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 4,
        value_name = "N,N,N,N",
        conflicts_with = "plan"
    )]
    pub counts: Option<Vec<usize>>,
    /// Global seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Highest reflection order simulated.
    #[arg(long, default_value_t = rgi_core::ism::MAX_ORDER)]
    pub max_order: usize,
    /// Write train/val/test splits of a standard size instead of one file.
    #[arg(long, value_enum, requires = "out_dir")]
    pub plan: Option<Plan>,
    /// Directory receiving train.rgi, val.rgi and test.rgi with --plan.
    #[arg(long, value_name = "DIR", requires = "plan")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Plan {
    /// 2000 / 200 / 200 samples.
    Desk,
    /// 39000 / 1000 / 500 samples.
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset.
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Validation dataset used for early stopping.
    #[arg(long, value_name = "FILE")]
    pub val: PathBuf,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint written with the best validation parameters.
    #[arg(long, value_name = "FILE", default_value = "model.rgiw")]
    pub out: PathBuf,
    /// Per-epoch loss CSV [default: checkpoint path with a .csv extension].
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs without validation improvement before stopping [default: min(10, epochs)].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Continue from an existing checkpoint instead of a fresh initialization.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Dataset to score.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Metrics table CSV [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-room, per-wall detail CSV.
    #[arg(long, value_name = "FILE")]
    pub detail: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Dataset file.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Sample index.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// What to dump.
    #[arg(long, value_enum, default_value_t = What::Rir)]
    pub what: What,
    /// Highest reflection order listed with --what images.
    #[arg(long, default_value_t = rgi_core::ism::MAX_ORDER)]
    pub max_order: usize,
    /// List only image sources whose path to the array center is valid.
    #[arg(long)]
    pub valid_only: bool,
    /// Output CSV [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    /// 32 rows of 1024 samples.
    Rir,
    /// Image sources rebuilt from the stored room seed.
    Images,
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn run() -> Result<(), CliError> {
    let args = config::expand_args(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_logging(&cli);
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Inspect(a) => commands::inspect(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
