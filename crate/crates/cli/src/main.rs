//! `hsfs`: scene generation, dataset preparation, pixel classification, band
//! pruning and cell masking from the command line.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsfs_core::ErrorCategory;

/// Bad flag values, config files or input combinations.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

#[derive(Parser)]
#[command(
    name = "hsfs",
    version,
    about = "Hyperspectral pixel classification, band pruning and cell masking"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (falls back to the config file, then HSFS_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutDir {
    /// Directory for outputs, resolved.toml and summary.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene (cube, mask, sidecar).
    Gen(commands::GenArgs),
    /// Turn a cube and mask into a pixel dataset.
    Pixelize(commands::PixelizeArgs),
    /// Undersample every class to the smallest class count.
    Balance(commands::BalanceArgs),
    /// Shuffle and split into train/val/test.
    Split(commands::SplitArgs),
    /// Train the dense pixel classifier.
    TrainPixel(commands::TrainPixelArgs),
    /// Evaluate a pixel classifier on a dataset.
    EvalPixel(commands::EvalPixelArgs),
    /// Classify every pixel of a cube and render an overlay.
    ClassifyCube(commands::ClassifyCubeArgs),
    /// Iteratively prune input bands.
    Prune(commands::PruneArgs),
    /// Sample augmented chips from one or more scenes.
    Chips(commands::ChipsArgs),
    /// Train the convolutional masker.
    TrainMask(commands::TrainMaskArgs),
    /// Evaluate a masker on a chip set.
    EvalMask(commands::EvalMaskArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(cat) = hsfs_core::categorize(cause) {
            return match cat {
                ErrorCategory::Io => 1,
                ErrorCategory::InvalidInput => 2,
                ErrorCategory::Format => 3,
                ErrorCategory::Infeasible => 4,
                ErrorCategory::Divergence => 5,
            };
        }
        if cause.is::<InvalidInput>() || cause.is::<toml::de::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
