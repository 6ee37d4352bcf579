//! Command-line runner for the saliency network: dataset generation,
//! training, inference, evaluation, gradient checking and ablation suites.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage/configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sfcn", version, about = "Reflection-guided salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    GenData {
        /// Configuration file providing the data.* section.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// key=value overrides (flags win over the file).
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Train a model and write checkpoints plus a loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from a checkpoint instead of initializing fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Dataset directory (images/ + masks/).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Predict saliency maps for a directory of PPM images.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score saliency maps against ground-truth masks.
    Eval {
        /// Directory of predicted maps (PGM).
        #[arg(long)]
        maps: PathBuf,
        /// Directory of ground-truth masks (PGM).
        #[arg(long)]
        truth: PathBuf,
        /// Report CSV path; PR-curve and per-image CSVs land beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Train and score a family of configuration variants.
    Ablate {
        /// One of: input, mean, k, share, bn.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Shared training budget (steps) for every variant.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            spec,
            out,
            overrides,
        } => commands::gen_data::run(spec.as_deref(), &out, &overrides),
        Command::Train {
            config,
            resume,
            data,
            out,
            overrides,
        } => commands::train::run(
            config.as_deref(),
            resume.as_deref(),
            &data,
            &out,
            &overrides,
        ),
        Command::Infer { ckpt, images, out } => commands::infer::run(&ckpt, &images, &out),
        Command::Eval { maps, truth, out } => commands::eval::run(&maps, &truth, &out),
        Command::Gradcheck { config, overrides } => {
            commands::gradcheck::run(config.as_deref(), &overrides)
        }
        Command::Ablate {
            suite,
            config,
            data,
            out,
            budget,
            overrides,
        } => commands::ablate::run(&suite, config.as_deref(), &data, &out, budget, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
