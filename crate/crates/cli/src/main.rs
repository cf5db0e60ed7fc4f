#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use error::CliError;

/// Shape tracking from far-field scattering data.
#[derive(Debug, Parser)]
#[command(name = "scattrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (output file for generate-shapes).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw random admissible shapes as JSON lines.
    GenerateShapes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Simulate a trajectory and its far-field measurements.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Shape file; a random shape is drawn when omitted.
        #[arg(long)]
        shape: Option<PathBuf>,
    },
    /// Train the shape-recovery network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Existing dataset; generated from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model snapshot to continue training from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Track poses from a directory of measurements.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "model")]
        shape: Option<PathBuf>,
        /// Recover the reference shape from the first measurement.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Ground-truth trajectory; `<input>/trajectory.txt` is used if present.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Rotation sensitivity and objective landscape diagnostics.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shape: Option<PathBuf>,
    },
    /// Compare a track against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        shape: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenerateShapes { common, .. }
            | Command::Simulate { common, .. }
            | Command::Train { common, .. }
            | Command::Track { common, .. }
            | Command::Probe { common, .. }
            | Command::Evaluate { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let cfg = Config::load(common.config.as_deref(), common.seed)?;
    let out = common.out.as_path();
    log::info!("{}", cfg.header());
    match &cli.command {
        Command::GenerateShapes { count, .. } => commands::generate_shapes(&cfg, *count, out),
        Command::Simulate { shape, .. } => commands::simulate_cmd(&cfg, shape.as_deref(), out),
        Command::Train { dataset, resume, .. } => commands::train_cmd(
            &cfg,
            commands::TrainArgs { dataset: dataset.as_deref(), resume: resume.as_deref() },
            out,
        ),
        Command::Track { input, shape, model, truth, .. } => commands::track_cmd(
            &cfg,
            commands::TrackArgs { input, shape: shape.as_deref(), model: model.as_deref(), truth: truth.as_deref() },
            out,
        ),
        Command::Probe { shape, .. } => commands::probe_cmd(&cfg, shape.as_deref(), out),
        Command::Evaluate { track, truth, shape, .. } => commands::evaluate_cmd(&cfg, track, truth, shape, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
