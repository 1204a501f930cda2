//! `npde`: dataset generation, training, evaluation, filter analysis and
//! benchmarking driven by one JSON experiment config.
//!
//! Exit codes: 0 success, 2 invalid config or incompatible inputs, 3 file
//! or IO failure, 4 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Lib(#[from] npde::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use npde::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Lib(e) => match e {
                E::Config(_) | E::Usage(_) | E::Dimension(_) => 2,
                E::Io(_) | E::Format { .. } => 3,
                E::NonFinite { .. } | E::StepSize { .. } => 4,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "npde", version, about = "Neural PDE surrogate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seeds of the command's sections.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Data generation threads; all cores by default.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories and write the dataset.
    Generate {
        /// Dataset path; overrides `paths.dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and metrics CSV.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write filter spectra of a U-Net checkpoint and the convolution-theorem report.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory; overrides `paths.analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input grid as `NYxNX`; the data grid by default.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
        /// Random pairs per length in the convolution-theorem suite.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
    /// Time forward and backward passes of the configured model.
    Bench {
        /// CSV path; overrides `paths.bench`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Also report the 5-step rollout SMSE.
    #[arg(long)]
    pub rollout: bool,
    /// Save-interval multiple between frames; the shortest training stride by default.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Which trajectories to score.
    #[arg(long, value_enum, default_value_t = Split::Val)]
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// The held-out tail used for validation during training.
    Val,
    /// Every trajectory.
    All,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected NYxNX, got {s}"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t}: {e}"));
    Ok((n(a)?, n(b)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Generate { out } => commands::generate(g, out),
        Command::Train { dataset, checkpoint, metrics } => commands::train(g, dataset, checkpoint, metrics),
        Command::Eval(args) => commands::eval(g, &args),
        Command::Analyze { checkpoint, out, grid, pairs } => commands::analyze(g, checkpoint, out, grid, pairs),
        Command::Bench { out } => commands::bench(g, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
