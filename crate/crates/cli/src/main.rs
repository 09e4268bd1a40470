//! `mdgc` — train, evaluate, and explain fundus-image classifiers.
//!
//! Subcommands mirror the pipeline: `preprocess` crops and resizes a corpus,
//! `split` derives balanced train/test manifests, `train` fits a model and
//! writes a checkpoint, `eval` scores a manifest and emits a report, and
//! `gradcam` renders class-activation heatmaps. Every command is
//! deterministic given its inputs and seeds.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure during training.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdgc_cli::commands;
use mdgc_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mdgc",
    about = "Fundus image classification: training, evaluation, and heatmaps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop away dark borders and resize every manifest image.
    Preprocess {
        /// Directory holding the source images and their manifest.csv.
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Directory that receives processed images and manifest.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Output side length in pixels.
        #[arg(long)]
        size: usize,
        /// Channel-mean threshold below which border rows/columns are dark.
        #[arg(long, default_value_t = mdgc_core::transform::DEFAULT_BORDER_THRESHOLD)]
        threshold: u8,
    },
    /// Balance classes, then split a manifest into train.csv and test.csv.
    Split {
        /// Manifest to partition.
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        /// Fraction of each class assigned to training (exclusive 0..1).
        #[arg(long)]
        ratio: f64,
        /// Seed driving both the balancing and the split shuffles.
        #[arg(long)]
        seed: u64,
        /// Directory that receives train.csv and test.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model described by a run-configuration file.
    Train {
        /// JSON run configuration.
        #[arg(long, value_name = "JSON")]
        config: PathBuf,
        /// Checkpoint file to write.
        #[arg(long, value_name = "CKPT")]
        out: PathBuf,
        /// Optional JSON training log.
        #[arg(long, value_name = "JSON")]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a manifest and write a metrics report.
    Eval {
        /// Checkpoint to load.
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        /// Manifest of evaluation images.
        #[arg(long, value_name = "CSV")]
        split: PathBuf,
        /// Report JSON to write.
        #[arg(long, value_name = "JSON")]
        report: PathBuf,
        /// Train fraction recorded in the report's split metadata.
        #[arg(long, default_value_t = 0.0)]
        train_ratio: f64,
        /// Split seed recorded in the report's split metadata.
        #[arg(long, default_value_t = 0)]
        train_seed: u64,
    },
    /// Render a class-activation heatmap and overlay for one image.
    Gradcam {
        /// Checkpoint to load.
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        /// Input image (must match the model's input size).
        #[arg(long, value_name = "PPM")]
        image: PathBuf,
        /// Class to explain: "auto" to use the predicted class, or an index.
        #[arg(long, default_value = "auto")]
        class: String,
        /// Layer to tap instead of the architecture's default.
        #[arg(long)]
        layer: Option<String>,
        /// Output prefix; writes <prefix>.heat.pgm and <prefix>.overlay.ppm.
        #[arg(long, value_name = "PREFIX")]
        out: PathBuf,
    },
}

/// Maps an error to its exit code class.
fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvalidArgument(_) | Error::InvalidArchitecture(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess {
            input,
            out,
            size,
            threshold,
        } => commands::preprocess::run(&input, &out, size, threshold),
        Command::Split {
            manifest,
            ratio,
            seed,
            out,
        } => commands::split::run(&manifest, ratio, seed, &out),
        Command::Train { config, out, log } => commands::train::run(&config, &out, log.as_deref()),
        Command::Eval {
            ckpt,
            split,
            report,
            train_ratio,
            train_seed,
        } => commands::eval::run(&ckpt, &split, &report, train_ratio, train_seed),
        Command::Gradcam {
            ckpt,
            image,
            class,
            layer,
            out,
        } => commands::gradcam::run(&ckpt, &image, &class, layer.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error))
        }
    }
}
