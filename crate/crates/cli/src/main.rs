//! Command-line front end for the nanotrack pipeline: render synthetic
//! datasets, train and quantize the detector, plan its deployment, evaluate
//! predictions, and run closed-loop tracking episodes.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::{PerceptionKind, RunConfig};
use nanotrack_core::error::Error;

#[derive(Debug, Parser)]
#[command(name = "nanotrack", version, about = "Desk-scale drone tracking pipeline")]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for rendering, training, and episodes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for reports, plots, and provenance records.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset of annotated frames.
    RenderDataset {
        /// Dataset directory to create (default: the configured dataset path).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of frames to render.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the detector on a rendered dataset.
    Train {
        /// Dataset directory to train on.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Where to write the trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the configured learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Calibrate an int8 model from a trained float model.
    Quantize {
        /// Trained float model to quantize.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset supplying calibration images.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Where to write the int8 model (default: <output>/model_int8.ntrk).
        #[arg(long)]
        out: Option<PathBuf>,
        /// How many calibration images to use.
        #[arg(long)]
        calibration_images: Option<usize>,
    },
    /// Print the deployment plan: per-layer tiling, rates, and power.
    Plan {
        /// Model file to plan for, or "ref" for the reference network.
        #[arg(long, default_value = "ref")]
        model: String,
    },
    /// Evaluate a model or a predictions file against a dataset.
    Eval {
        /// Dataset with ground-truth annotations.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model file to run (default: the configured model path).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Annotation-shaped JSONL predictions keyed by frame name.
        #[arg(long, conflicts_with = "model")]
        predictions: Option<PathBuf>,
    },
    /// Run a closed-loop tracking episode along a target trajectory.
    Simulate {
        /// Perception to fly with.
        #[arg(long, value_enum)]
        perception: Option<PerceptionCli>,
        /// Target speed along the trajectory, m/s.
        #[arg(long)]
        speed: Option<f64>,
        /// Episode duration, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Model file when perception is "model".
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum PerceptionCli {
    Oracle,
    Model,
}

impl From<PerceptionCli> for PerceptionKind {
    fn from(p: PerceptionCli) -> PerceptionKind {
        match p {
            PerceptionCli::Oracle => PerceptionKind::Oracle,
            PerceptionCli::Model => PerceptionKind::Model,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(output) = &cli.output {
        config.paths.output = output.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::RenderDataset { out, frames } => commands::render_dataset(&config, out, frames),
        Command::Train { dataset, model, epochs, learning_rate } => {
            if let Some(d) = dataset {
                config.paths.dataset = d;
            }
            if let Some(m) = model {
                config.paths.model = m;
            }
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                config.train.learning_rate = lr;
            }
            commands::train_cmd(&config)
        }
        Command::Quantize { model, dataset, out, calibration_images } => {
            if let Some(m) = model {
                config.paths.model = m;
            }
            if let Some(d) = dataset {
                config.paths.dataset = d;
            }
            if let Some(n) = calibration_images {
                config.quantize.calibration_images = n;
            }
            commands::quantize_cmd(&config, out)
        }
        Command::Plan { model } => commands::plan_cmd(&config, &model),
        Command::Eval { dataset, model, predictions } => {
            if let Some(d) = dataset {
                config.paths.dataset = d;
            }
            commands::eval_cmd(&config, model, predictions)
        }
        Command::Simulate { perception, speed, duration, model } => {
            if let Some(m) = model {
                config.paths.model = m;
            }
            commands::simulate_cmd(&config, speed, duration, perception.map(PerceptionKind::from))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version are successful exits; everything else is
            // usage misuse, including a bare invocation with no subcommand.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A downstream consumer closing the pipe early is not our failure.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}
