//! Command-line driver: dataset synthesis, adversarial training, recognizer
//! training, sampling, evaluation, plotting, and JSON export.
//!
//! Every command is a pure function of (configuration, input files, seed):
//! re-running with the same inputs overwrites the same outputs with
//! identical bytes. Exit codes: 0 success, 2 configuration error, 3 data or
//! I/O error, 4 numerical divergence.

mod commands;
mod svg;

use clap::{Args, Parser, Subcommand};
use motiongen::Error;
use std::path::PathBuf;

/// Environment variable overriding the configured output directory
/// (the `--out` flag still wins over both).
pub const OUT_DIR_ENV: &str = "MOTIONGEN_OUT";

#[derive(Parser)]
#[command(
    name = "motiongen",
    version,
    about = "Label-conditioned multi-person motion generation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and MOTIONGEN_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the labeled motion dataset described by the config.
    SynthData {
        #[command(flatten)]
        common: ConfigArgs,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override samples per class.
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Train the generator against the critic on a dataset.
    TrainGan {
        #[command(flatten)]
        common: ConfigArgs,
        /// Dataset file produced by synth-data.
        #[arg(long)]
        dataset: PathBuf,
        /// Override the iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a generator checkpoint written by a previous run
        /// (the matching critic checkpoint must sit next to it).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write intermediate checkpoints every N iterations.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Train the action recognizer used for evaluation.
    TrainRecognizer {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Validation split denominator: every Nth sample of each class is
        /// held out (2 = half, 4 = quarter). Must be at least 2.
        #[arg(long, default_value_t = 4)]
        holdout: usize,
        /// Train on individual persons of a multi-person dataset
        /// (the recognizer behind person-aggregated distances).
        #[arg(long, default_value_t = false)]
        single_person: bool,
        /// Override the recognizer seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample motions from a trained generator checkpoint.
    Generate {
        /// Generator checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Class label id to condition on.
        #[arg(long)]
        label: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: alongside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export the motions as JSON.
        #[arg(long, default_value_t = false)]
        json: bool,
    },
    /// Compute distribution distances and label accuracy for a generator.
    Evaluate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Generator checkpoint.
        #[arg(long)]
        generator: PathBuf,
        /// Recognizer checkpoint (whole sequences).
        #[arg(long)]
        recognizer: PathBuf,
        /// Single-person recognizer checkpoint, required for multi-person
        /// data to report the person-aggregated distance.
        #[arg(long)]
        person_recognizer: Option<PathBuf>,
        /// Real dataset to compare against.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Render a training log CSV or a metrics JSON to an SVG plot.
    Plot {
        /// Input: train_log.csv or metrics.json.
        #[arg(long)]
        input: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a binary motion dataset file to JSON.
    ExportJson {
        /// Dataset or generated-motion file.
        #[arg(long)]
        input: PathBuf,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::SynthData {
            common,
            seed,
            samples_per_class,
        } => commands::synth_data(&common, seed, samples_per_class),
        Cmd::TrainGan {
            common,
            dataset,
            iterations,
            seed,
            resume,
            checkpoint_every,
        } => commands::train_gan(
            &common,
            &dataset,
            iterations,
            seed,
            resume.as_deref(),
            checkpoint_every,
        ),
        Cmd::TrainRecognizer {
            common,
            dataset,
            holdout,
            single_person,
            seed,
        } => commands::train_recognizer(&common, &dataset, holdout, single_person, seed),
        Cmd::Generate {
            checkpoint,
            label,
            count,
            seed,
            out,
            json,
        } => commands::generate(&checkpoint, label, count, seed, out.as_deref(), json),
        Cmd::Evaluate {
            common,
            generator,
            recognizer,
            person_recognizer,
            dataset,
        } => commands::evaluate(
            &common,
            &generator,
            &recognizer,
            person_recognizer.as_deref(),
            &dataset,
        ),
        Cmd::Plot { input, out } => commands::plot(&input, &out),
        Cmd::ExportJson { input, out } => commands::export_json(&input, &out),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
