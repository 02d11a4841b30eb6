//! `gpr-odom`: simulate data, preprocess traces, train and evaluate the
//! odometry network, run ablations, fuse trajectories and plot them.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "gpr-odom", version, about = "GPR odometry toolkit")]
struct Cli {
    /// JSON config; keys not given keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Overrides `seed` (and `train.seed` where present).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled B-scan pair dataset and fusion trajectories.
    Simulate,
    /// Preprocess raw traces into distance-uniform B-scans.
    Preprocess {
        /// Traces CSV (`time_s` + one column per trace) or a trajectory
        /// directory holding `gpr.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Positions sidecar (`trace_index,along_track_m`).
        #[arg(long)]
        positions: Option<PathBuf>,
    },
    /// Train a network variant and evaluate it on held-out trajectories.
    Train {
        /// Dataset directory from `simulate` (generated when omitted).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate every network variant on one split.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fuse IMU, wheel and GPR distances into trajectories.
    Fuse {
        /// Directory of trajectory directories (simulated when omitted).
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Network checkpoint; without one, recorded `gpr_odom.csv`
        /// distances are used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw trajectory CSVs (`x_m`, `y_m` columns) into one SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Io(String),
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {}", e.join("; ")),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::Run(m) => write!(f, "run: {m}"),
        }
    }
}

macro_rules! run_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}

run_error!(
    gpr_odom::datagen::DatagenError,
    gpr_odom::preprocess::PreprocessError,
    gpr_odom::trainer::TrainError,
    gpr_odom::fusion::FusionError,
    gpr_odom::odomnet::OdomNetError
);

/// Global options shared by every command.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
}

fn command() -> clap::Command {
    Cli::command()
        .mut_subcommand("simulate", |c| c.after_long_help(commands::SimulateConfig::help()))
        .mut_subcommand("preprocess", |c| c.after_long_help(commands::PreprocessRunConfig::help()))
        .mut_subcommand("train", |c| c.after_long_help(commands::TrainRunConfig::help()))
        .mut_subcommand("eval", |c| c.after_long_help(commands::EvalRunConfig::help()))
        .mut_subcommand("ablate", |c| c.after_long_help(commands::AblateRunConfig::help()))
        .mut_subcommand("fuse", |c| c.after_long_help(commands::FuseRunConfig::help()))
        .mut_subcommand("plot", |c| c.after_long_help(commands::PlotConfig::help()))
}

fn threads_from_env() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("GPR_ODOM_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                gpr_odom::par::init_from_env();
            }
            _ => {
                return Err(CliError::Config(vec![format!(
                    "GPR_ODOM_THREADS: expected a positive integer, got '{v}'"
                )]))
            }
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<PathBuf, CliError> {
    threads_from_env()?;
    let g = Globals {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&g),
        Command::Preprocess { input, positions } => commands::preprocess(&g, input, positions),
        Command::Train { data } => commands::train(&g, data),
        Command::Eval { checkpoint, data } => commands::eval(&g, checkpoint, data),
        Command::Ablate { data } => commands::ablate(&g, data),
        Command::Fuse { trajectories, checkpoint } => commands::fuse(&g, trajectories, checkpoint),
        Command::Plot { inputs } => commands::plot(&g, inputs),
    }
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            match e {
                CliError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
