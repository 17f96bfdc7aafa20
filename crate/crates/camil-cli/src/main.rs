//! Command-line front end. Every subcommand resolves one merged run
//! configuration (file, then CAMIL_SEED, then flags), echoes it into the
//! output directory, and maps errors to exit codes: 2 for bad usage or
//! input, 3 for a violated internal invariant.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use camil_core::error::CamilError;
use camil_core::Result;

use config::Common;

#[derive(Parser)]
#[command(name = "camil", version, about = "Context-aware multiple instance learning on tiled slides")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic slide dataset and write it as bag files plus a manifest
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of slides to generate
        #[arg(long)]
        slides: Option<usize>,
    },
    /// Pretrain the tile encoder with the self-supervised objective
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Run k-fold cross-validation, then fit a final model on a fresh split
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding a previously generated dataset (manifest.json)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a model (or a fresh untrained one) on the dataset
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding a previously generated dataset (manifest.json)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model checkpoint; omitted means freshly initialized weights
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Render per-tile attention heatmaps as PGM images
    Heatmap {
        #[command(flatten)]
        common: Common,
        /// Directory holding a previously generated dataset (manifest.json)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model checkpoint; omitted means freshly initialized weights
        #[arg(long)]
        model: Option<PathBuf>,
        /// How many slides to render
        #[arg(long)]
        count: Option<usize>,
    },
    /// Cross-validate every model variant on one shared dataset
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Directory holding a previously generated dataset (manifest.json)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences for all variants
    Gradcheck {
        /// Seed for the probe bag and parameter draw
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CamilError::InvalidArgument(
                "--threads must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CamilError::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, slides } => {
            configure_threads(common.threads)?;
            let mut cfg = config::load(&common)?;
            if let Some(n) = slides {
                cfg.slides = n;
            }
            commands::synth(&cfg)
        }
        Command::Pretrain { common } => {
            configure_threads(common.threads)?;
            let cfg = config::load(&common)?;
            commands::pretrain(&cfg)
        }
        Command::Train { common, data } => {
            configure_threads(common.threads)?;
            let cfg = config::load(&common)?;
            commands::train_cmd(&cfg, data.as_deref())
        }
        Command::Eval {
            common,
            data,
            model,
        } => {
            configure_threads(common.threads)?;
            let cfg = config::load(&common)?;
            commands::eval(&cfg, data.as_deref(), model.as_deref())
        }
        Command::Heatmap {
            common,
            data,
            model,
            count,
        } => {
            configure_threads(common.threads)?;
            let cfg = config::load(&common)?;
            let count = count.unwrap_or(cfg.heatmap_count);
            commands::heatmap(&cfg, data.as_deref(), model.as_deref(), count)
        }
        Command::Ablate { common, data } => {
            configure_threads(common.threads)?;
            let cfg = config::load(&common)?;
            commands::ablate(&cfg, data.as_deref())
        }
        Command::Gradcheck {
            seed,
            corrupt_gradient,
        } => commands::gradcheck(seed, corrupt_gradient),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CamilError::Invariant(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
