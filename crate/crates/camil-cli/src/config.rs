//! One flat run configuration shared by every subcommand, loadable from a
//! JSON file with env and flag overrides. Precedence: file < CAMIL_SEED <
//! flags. The effective config is echoed next to every artifact.

use std::env;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use camil_core::contrastive::EncoderConfig;
use camil_core::error::CamilError;
use camil_core::grid::Distance;
use camil_core::model::{LandmarkStrategy, ModelConfig, NystromConfig, Variant};
use camil_core::synth::SynthConfig;
use camil_core::train::TrainConfig;
use camil_core::Result;

/// Where bag features come from: the synthetic generator directly, a
/// contrastively pretrained encoder over pixel tiles, or the same encoder
/// left at its random initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Raw,
    Contrastive,
    Random,
}

impl FromStr for FeatureSource {
    type Err = CamilError;

    fn from_str(s: &str) -> Result<FeatureSource> {
        match s {
            "raw" => Ok(FeatureSource::Raw),
            "contrastive" => Ok(FeatureSource::Contrastive),
            "random" => Ok(FeatureSource::Random),
            other => Err(CamilError::InvalidArgument(format!(
                "unknown feature source {other:?}, expected raw, contrastive or random"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    // Synthetic dataset.
    pub grid_size: usize,
    pub d: usize,
    pub tumor_fraction: f64,
    pub blob_count: usize,
    pub feature_shift: f64,
    pub noise_sigma: f64,
    pub distractor_rate: f64,
    pub slides: usize,
    pub positive_rate: f64,
    // Optimization.
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub folds: usize,
    pub early_stop_patience: usize,
    pub variant: Variant,
    // Model.
    pub hdim: usize,
    pub landmarks: usize,
    pub pinv_iters: usize,
    pub landmark_strategy: LandmarkStrategy,
    pub distance: Distance,
    // Feature pipeline.
    pub features: FeatureSource,
    pub tile_size: usize,
    pub encoder_hidden: usize,
    pub embed: usize,
    pub tau: f64,
    pub pretrain_epochs: usize,
    pub pretrain_tiles: usize,
    // Plumbing.
    pub heatmap_count: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let nystrom = NystromConfig::default();
        RunConfig {
            grid_size: synth.grid_size,
            d: synth.d,
            tumor_fraction: synth.tumor_fraction,
            blob_count: synth.blob_count,
            feature_shift: synth.feature_shift,
            noise_sigma: synth.noise_sigma,
            distractor_rate: synth.distractor_rate,
            slides: 300,
            positive_rate: 0.5,
            lr: train.lr,
            weight_decay: train.weight_decay,
            epochs: train.epochs,
            folds: train.folds,
            early_stop_patience: train.patience,
            variant: train.variant,
            hdim: 64,
            landmarks: nystrom.landmarks,
            pinv_iters: nystrom.pinv_iters,
            landmark_strategy: nystrom.strategy,
            distance: Distance::L2,
            features: FeatureSource::Raw,
            tile_size: 8,
            encoder_hidden: 32,
            embed: 16,
            tau: 0.5,
            pretrain_epochs: 30,
            pretrain_tiles: 64,
            heatmap_count: 4,
            out: PathBuf::from("camil-out"),
            seed: train.seed,
        }
    }
}

impl RunConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            grid_size: self.grid_size,
            d: self.d,
            tumor_fraction: self.tumor_fraction,
            blob_count: self.blob_count,
            feature_shift: self.feature_shift,
            noise_sigma: self.noise_sigma,
            distractor_rate: self.distractor_rate,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            folds: self.folds,
            seed: self.seed,
            variant: self.variant,
            patience: self.early_stop_patience,
        }
    }

    /// Model dimensions for bags of feature width `d` (which depends on the
    /// feature source, so it is not always `self.d`).
    pub fn model(&self, d: usize) -> ModelConfig {
        ModelConfig {
            d,
            hdim: self.hdim,
            classes: 2,
            nystrom: NystromConfig {
                landmarks: self.landmarks,
                pinv_iters: self.pinv_iters,
                strategy: self.landmark_strategy,
            },
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        let mut cfg = EncoderConfig::new(
            self.tile_size * self.tile_size,
            self.encoder_hidden,
            self.embed,
        );
        cfg.tau = self.tau;
        cfg
    }
}

/// Flags shared by the pipeline subcommands.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for the whole run (beats config file and CAMIL_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model variant: camil, camil-l, camil-g, mean or max.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Landmark count for the global attention stage.
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Landmark choice: segment or random.
    #[arg(long)]
    pub landmark_strategy: Option<LandmarkStrategy>,
    /// Neighbor similarity distance: l2 or ssd.
    #[arg(long)]
    pub distance: Option<Distance>,
    /// Feature source: raw, contrastive or random.
    #[arg(long)]
    pub features: Option<FeatureSource>,
    /// Cap on worker threads; default = logical cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CamilError::io(path, e))?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| {
                CamilError::InvalidArgument(format!("config {}: {e}", path.display()))
            })?
        }
        None => RunConfig::default(),
    };
    if let Ok(v) = env::var("CAMIL_SEED") {
        cfg.seed = v.parse().map_err(|_| {
            CamilError::InvalidArgument(format!(
                "CAMIL_SEED must be an unsigned 64-bit integer, got {v:?}"
            ))
        })?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(n) = common.landmarks {
        cfg.landmarks = n;
    }
    if let Some(s) = common.landmark_strategy {
        cfg.landmark_strategy = s;
    }
    if let Some(d) = common.distance {
        cfg.distance = d;
    }
    if let Some(f) = common.features {
        cfg.features = f;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}
