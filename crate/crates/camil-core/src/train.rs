//! Training loop with validation-checkpointed early stopping, k-fold
//! cross-validation, evaluation reports, and attention heatmap export.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CamilError, Result};
use crate::grid::{FeatureBag, SimilarityMask, TileGrid};
use crate::metrics::{acc_f1, auc, dice, specificity};
use crate::model::{
    backward, forward, forward_loss, init_params, ForwardTrace, ModelConfig, ModelParams, Variant,
};
use crate::optim::{Adam, AdamConfig, ParamSet};
use crate::pixmap::{write_pgm, Pixmap};
use crate::seed::splitmix64;

/// Pixel side length of one tile block in exported heatmaps.
const HEATMAP_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub variant: Variant,
    #[serde(rename = "early-stop-patience")]
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            epochs: 100,
            folds: 5,
            seed: 7,
            variant: Variant::Camil,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(CamilError::InvalidArgument(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.epochs == 0 {
            return Err(CamilError::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CamilError::InvalidArgument(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(CamilError::InvalidArgument(format!(
                "weight-decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Total optimizer steps taken (one per slide per epoch).
    pub steps: usize,
}

fn check_aligned(bags: &[FeatureBag], masks: &[SimilarityMask], what: &'static str) -> Result<()> {
    if bags.len() != masks.len() {
        return Err(CamilError::shape(
            what,
            (bags.len(), 1),
            (masks.len(), 1),
        ));
    }
    Ok(())
}

/// Seeded-shuffle training: every epoch walks the training set in a fresh
/// shuffled order and takes one Adam step per slide, with L2 weight decay
/// folded into the gradient. Returns the best-validation-loss checkpoint;
/// with an empty validation set the training loss stands in for selection.
pub fn train(
    train_bags: &[FeatureBag],
    train_masks: &[SimilarityMask],
    val_bags: &[FeatureBag],
    val_masks: &[SimilarityMask],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_aligned(train_bags, train_masks, "train bags vs masks")?;
    check_aligned(val_bags, val_masks, "validation bags vs masks")?;
    if train_bags.len() < 2 {
        return Err(CamilError::InvalidArgument(format!(
            "training needs at least 2 bags, got {}",
            train_bags.len()
        )));
    }
    let first = train_bags[0].label;
    if train_bags.iter().all(|b| b.label == first) {
        return Err(CamilError::InvalidArgument(
            "training set holds a single class".into(),
        ));
    }

    let mut params = init_params(model_cfg, cfg.variant, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut shuffle_rng =
        ChaCha12Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7368_7566_666c_6521));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_bags.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for i in order {
            let bag = &train_bags[i];
            let trace = forward(bag, &train_masks[i], &params)?;
            loss_sum += backward(trace, &mut params, bag.label)?;
            if cfg.weight_decay > 0.0 {
                for t in params.tensors_mut() {
                    let decay = t.value.scale(cfg.weight_decay);
                    t.grad = t.grad.add(&decay)?;
                }
            }
            adam.step(&mut params)?;
            steps += 1;
        }
        let train_loss = loss_sum / train_bags.len() as f64;
        let val_loss = if val_bags.is_empty() {
            train_loss
        } else {
            mean_loss(val_bags, val_masks, &params)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best {
            best = val_loss;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
        steps,
    })
}

fn mean_loss(
    bags: &[FeatureBag],
    masks: &[SimilarityMask],
    params: &ModelParams,
) -> Result<f64> {
    let mut sum = 0.0;
    for (bag, mask) in bags.iter().zip(masks) {
        sum += forward_loss(bag, mask, params, bag.label)?;
    }
    Ok(sum / bags.len() as f64)
}

/// One metric row; also the shape of the mean and std aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub auc: f64,
    pub f1: f64,
    pub dice: f64,
    pub specificity: f64,
}

impl MetricSet {
    fn values(&self) -> [f64; 5] {
        [self.acc, self.auc, self.f1, self.dice, self.specificity]
    }

    fn from_values(v: [f64; 5]) -> MetricSet {
        MetricSet {
            acc: v[0],
            auc: v[1],
            f1: v[2],
            dice: v[3],
            specificity: v[4],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub mean: MetricSet,
    pub std: MetricSet,
}

/// Slide-level probabilities and tile-level masks for a bag set. Positive
/// probability is softmax(logits)[1], so two classes are required. Dice is
/// averaged over slides with at least one positive tile, specificity over
/// all-negative slides; slides without tile labels skip both.
pub fn evaluate(
    bags: &[FeatureBag],
    masks: &[SimilarityMask],
    params: &ModelParams,
) -> Result<MetricSet> {
    check_aligned(bags, masks, "eval bags vs masks")?;
    if params.config.classes != 2 {
        return Err(CamilError::InvalidArgument(format!(
            "evaluation needs a binary classifier, got {} classes",
            params.config.classes
        )));
    }
    let per_bag: Vec<(f64, bool, Option<(Vec<bool>, Vec<bool>)>)> = bags
        .par_iter()
        .zip(masks.par_iter())
        .map(|(bag, mask)| {
            let trace = forward(bag, mask, params)?;
            let prob = positive_probability(&trace);
            let tiles = bag.tile_labels.as_ref().map(|gt| {
                let pred: Vec<bool> = trace
                    .attention_scores()
                    .iter()
                    .map(|&s| s >= 0.5)
                    .collect();
                (pred, gt.clone())
            });
            Ok((prob, bag.label == 1, tiles))
        })
        .collect::<Result<_>>()?;

    let probs: Vec<f64> = per_bag.iter().map(|r| r.0).collect();
    let labels: Vec<bool> = per_bag.iter().map(|r| r.1).collect();
    let (acc, f1) = acc_f1(&probs, &labels, 0.5)?;
    let auc = auc(&probs, &labels)?;

    let mut dices = Vec::new();
    let mut specs = Vec::new();
    for (_, _, tiles) in &per_bag {
        if let Some((pred, gt)) = tiles {
            if gt.iter().any(|&v| v) {
                dices.push(dice(pred, gt)?);
            } else {
                specs.push(specificity(pred, gt)?);
            }
        }
    }
    Ok(MetricSet {
        acc,
        auc,
        f1,
        dice: mean_or_nan(&dices),
        specificity: mean_or_nan(&specs),
    })
}

fn positive_probability(trace: &ForwardTrace) -> f64 {
    let l0 = trace.logits.get(0, 0);
    let l1 = trace.logits.get(0, 1);
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    e1 / (e0 + e1)
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// A seeded permutation of 0..n dealt into k folds whose sizes differ by at
/// most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(CamilError::InvalidArgument(format!(
            "cannot split {n} items into {k} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    perm.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// K-fold cross-validation: each fold serves once as the test set while the
/// remaining pool is split 80/20 into train and validation with a
/// fold-derived seed. Folds run concurrently; results keep fold order.
pub fn cross_validate(
    bags: &[FeatureBag],
    masks: &[SimilarityMask],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_aligned(bags, masks, "bags vs masks")?;
    let folds = kfold_split(bags.len(), cfg.folds, cfg.seed)?;

    let reports: Vec<FoldReport> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let fold_seed = splitmix64(cfg.seed).wrapping_add(f as u64 + 1);
            let in_test = |i: &usize| test_idx.contains(i);
            let mut pool: Vec<usize> = (0..bags.len()).filter(|i| !in_test(i)).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(fold_seed ^ 0x706f_6f6c));
            pool.shuffle(&mut rng);
            let val_len = (pool.len() / 5).max(1);
            let (val_idx, train_idx) = pool.split_at(val_len);

            let pick = |idx: &[usize]| -> (Vec<FeatureBag>, Vec<SimilarityMask>) {
                (
                    idx.iter().map(|&i| bags[i].clone()).collect(),
                    idx.iter().map(|&i| masks[i].clone()).collect(),
                )
            };
            let (train_b, train_m) = pick(train_idx);
            let (val_b, val_m) = pick(val_idx);
            let (test_b, test_m) = pick(test_idx);

            let fold_cfg = TrainConfig {
                seed: fold_seed,
                ..*cfg
            };
            let outcome = train(&train_b, &train_m, &val_b, &val_m, model_cfg, &fold_cfg)?;
            let metrics = evaluate(&test_b, &test_m, &outcome.params)?;
            Ok(FoldReport { fold: f, metrics })
        })
        .collect::<Result<_>>()?;

    let (mean, std) = aggregate(&reports);
    Ok(EvalReport {
        folds: reports,
        mean,
        std,
    })
}

/// Per-metric mean and sample std (n-1) over folds, skipping undefined
/// (NaN) fold entries.
pub fn aggregate(folds: &[FoldReport]) -> (MetricSet, MetricSet) {
    let mut mean = [f64::NAN; 5];
    let mut std = [0.0; 5];
    for m in 0..5 {
        let vals: Vec<f64> = folds
            .iter()
            .map(|f| f.metrics.values()[m])
            .filter(|v| v.is_finite())
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        mean[m] = mu;
        if vals.len() > 1 {
            let var =
                vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (vals.len() - 1) as f64;
            std[m] = var.sqrt();
        }
    }
    (MetricSet::from_values(mean), MetricSet::from_values(std))
}

/// Writes the per-epoch loss history as `epoch,train_loss,val_loss` rows.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    fs::write(path, out).map_err(|e| CamilError::io(path, e))
}

/// Renders per-tile attention scores as a PGM heatmap: one 8x8 pixel block
/// per tile at intensity round(255 * score), tiles outside the tissue grid
/// left black.
pub fn heatmap_export(trace: &ForwardTrace, grid: &TileGrid, path: &Path) -> Result<()> {
    let scores = trace.attention_scores();
    if scores.len() != grid.len() {
        return Err(CamilError::shape(
            "attention scores vs grid tiles",
            (scores.len(), 1),
            (grid.len(), 1),
        ));
    }
    let mut img = Pixmap::new(
        grid.grid_width * HEATMAP_BLOCK,
        grid.grid_height * HEATMAP_BLOCK,
    );
    for (&(r, c), &s) in grid.tiles().iter().zip(&scores) {
        let v = (255.0 * s).round().clamp(0.0, 255.0) as u8;
        for dr in 0..HEATMAP_BLOCK {
            for dc in 0..HEATMAP_BLOCK {
                img.set(r * HEATMAP_BLOCK + dr, c * HEATMAP_BLOCK + dc, v);
            }
        }
    }
    write_pgm(path, &img)
}
