mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, ScoreArgs, SynthArgs};
use config::RunConfig;
use error::Result;

/// No-reference contrast quality assessment: synthesise data, extract
/// features, train and evaluate MOS regression heads.
#[derive(Parser)]
#[command(name = "cqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a contrast-distorted dataset with pseudo-MOS labels.
    Synth {
        /// Directory of base images (PNG/PNM).
        #[arg(long, conflicts_with = "procedural")]
        bases: Option<PathBuf>,
        /// Generate this many procedural base images instead of reading --bases.
        #[arg(long)]
        procedural: Option<usize>,
        /// Side length of procedural bases.
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Comma-separated gamma exponents.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        gammas: Vec<f64>,
        /// Comma-separated linear contrast scales in (0, 2].
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        contrasts: Vec<f64>,
        /// Records per (base, level) pair; extra variants are mirrored or cropped.
        #[arg(long, default_value_t = 1)]
        variants: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract frozen features for every manifest row into a cache file.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// handcrafted or cnn.
        #[arg(long, default_value = "handcrafted")]
        extractor: String,
        /// Backbone weight archive (cnn).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Seeded random backbone weights instead of --weights (cnn).
        #[arg(long)]
        random_weights: Option<u64>,
        /// Backbone layout: nano or b0.
        #[arg(long = "config", default_value = "b0")]
        backbone: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the regression head from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a trained head on a manifest split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Anchor file written by pair-train (siamese heads only).
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// train, val or all.
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pairwise (siamese) difference head from a run config.
    PairTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the predicted MOS of one image.
    Score {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        random_weights: Option<u64>,
        #[arg(long, default_value = "b0")]
        backbone: String,
        #[arg(long)]
        anchors: Option<PathBuf>,
    },
    /// Turn a training report (and optional per-image eval rows) into plot data.
    Report {
        #[arg(long)]
        train_report: PathBuf,
        /// per_image.csv written by eval.
        #[arg(long)]
        per_image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(path: &std::path::Path, epochs: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
        cfg.validate().map_err(|e| e.context("--epochs"))?;
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<String> {
    match cmd {
        Command::Synth {
            bases,
            procedural,
            size,
            gammas,
            contrasts,
            variants,
            seed,
            out,
        } => commands::synth(&SynthArgs {
            bases,
            procedural,
            size,
            gammas,
            contrasts,
            variants,
            seed,
            out,
        }),
        Command::Extract {
            manifest,
            extractor,
            weights,
            random_weights,
            backbone,
            out,
        } => {
            let ex = commands::build_extractor(&extractor, weights.as_deref(), random_weights, &backbone)?;
            commands::extract(&manifest, &ex, &out)
        }
        Command::Train { config, epochs } => commands::train_cmd(&run_config(&config, epochs)?),
        Command::PairTrain { config, epochs } => commands::pair_train_cmd(&run_config(&config, epochs)?),
        Command::Eval {
            manifest,
            head,
            features,
            anchors,
            split,
            out,
        } => commands::eval_cmd(&EvalArgs {
            manifest,
            head,
            features,
            anchors,
            split,
            out,
        })
        .map(|(_, line)| line),
        Command::Score {
            image,
            head,
            weights,
            random_weights,
            backbone,
            anchors,
        } => commands::score_cmd(&ScoreArgs {
            image,
            head,
            weights,
            random_weights,
            backbone,
            anchors,
        })
        .map(|s| format!("{s:.4}")),
        Command::Report {
            train_report,
            per_image,
            out,
        } => commands::report_cmd(&train_report, per_image.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
