//! Subcommand implementations: each one resolves the dataset, runs the
//! relevant pipeline stage, writes artifacts plus the effective config into
//! the output directory, and prints a short summary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use camil_core::bagio::{load_bag, save_bag};
use camil_core::contrastive::{encode, init_encoder, pretrain_encoder, save_encoder};
use camil_core::error::CamilError;
use camil_core::grid::{bag_similarity, FeatureBag, SimilarityMask};
use camil_core::model::{
    forward, grad_check, init_params, load_model, save_model, GradCheckConfig, ModelParams,
    Variant,
};
use camil_core::tensor::Matrix;
use camil_core::train::{
    cross_validate, evaluate, heatmap_export, kfold_split, train, write_history_csv, EvalReport,
    MetricSet,
};
use camil_core::Result;
use camil_core::synth::{synth_dataset, synth_pixel_dataset, PixelSlide};

use crate::config::{FeatureSource, RunConfig};

const ALL_VARIANTS: [Variant; 5] = [
    Variant::Camil,
    Variant::CamilL,
    Variant::CamilG,
    Variant::MeanPool,
    Variant::MaxPool,
];

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    slides: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    label: usize,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CamilError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| {
        CamilError::InvalidArgument(format!("cannot serialize {}: {e}", path.display()))
    })?;
    fs::write(path, text + "\n").map_err(|e| CamilError::io(path, e))
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    write_json(&cfg.out.join("config.json"), cfg)
}

/// Materializes the working dataset: either bags reloaded from a synth
/// output directory, or bags generated from the config through the selected
/// feature source. Returns the bags, their neighbor masks, and the feature
/// width.
fn dataset(
    cfg: &RunConfig,
    data: Option<&Path>,
) -> Result<(Vec<FeatureBag>, Vec<SimilarityMask>, usize)> {
    let bags = match data {
        Some(dir) => {
            let path = dir.join("manifest.json");
            let text = fs::read_to_string(&path).map_err(|e| CamilError::io(&path, e))?;
            let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
                CamilError::InvalidArgument(format!("manifest {}: {e}", path.display()))
            })?;
            manifest
                .slides
                .iter()
                .map(|entry| load_bag(&dir.join(&entry.path)))
                .collect::<Result<Vec<_>>>()?
        }
        None => match cfg.features {
            FeatureSource::Raw => synth_dataset(&cfg.synth(), cfg.slides, cfg.positive_rate)?,
            source => {
                let slides =
                    synth_pixel_dataset(&cfg.synth(), cfg.slides, cfg.positive_rate, cfg.tile_size)?;
                let encoder = build_encoder(cfg, &slides, source)?;
                slides
                    .iter()
                    .map(|slide| {
                        let features = encode(&slide.tiles, &encoder)?;
                        FeatureBag::new(
                            slide.grid.clone(),
                            features,
                            slide.label,
                            Some(slide.tile_labels.clone()),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        },
    };
    if bags.is_empty() {
        return Err(CamilError::InvalidArgument("the dataset holds no slides".into()));
    }
    let d = bags[0].features.cols();
    let masks = bags
        .iter()
        .map(|b| bag_similarity(b, cfg.distance))
        .collect::<Result<Vec<_>>>()?;
    Ok((bags, masks, d))
}

/// Deterministic round-robin tile pool for encoder pretraining.
fn tile_pool(slides: &[PixelSlide], count: usize) -> Vec<Matrix> {
    (0..count)
        .map(|k| {
            let slide = &slides[k % slides.len()];
            slide.tiles[(k / slides.len()) % slide.tiles.len()].clone()
        })
        .collect()
}

fn build_encoder(
    cfg: &RunConfig,
    slides: &[PixelSlide],
    source: FeatureSource,
) -> Result<camil_core::contrastive::EncoderParams> {
    let init = init_encoder(cfg.encoder(), cfg.seed)?;
    match source {
        FeatureSource::Contrastive => {
            let pool = tile_pool(slides, cfg.pretrain_tiles);
            Ok(pretrain_encoder(&pool, init, cfg.pretrain_epochs, cfg.seed)?.0)
        }
        _ => Ok(init),
    }
}

fn load_or_init(cfg: &RunConfig, model: Option<&Path>, d: usize) -> Result<ModelParams> {
    match model {
        Some(path) => {
            let params = load_model(path)?;
            if params.config.d != d {
                return Err(CamilError::shape(
                    "checkpoint feature width vs dataset",
                    (params.config.d, 1),
                    (d, 1),
                ));
            }
            Ok(params)
        }
        None => init_params(cfg.model(d), cfg.variant, cfg.seed),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let bags = synth_dataset(&cfg.synth(), cfg.slides, cfg.positive_rate)?;
    ensure_dir(&cfg.out)?;
    let mut entries = Vec::with_capacity(bags.len());
    for (i, bag) in bags.iter().enumerate() {
        let name = format!("bag-{i:04}.bin");
        save_bag(&cfg.out.join(&name), bag)?;
        entries.push(ManifestEntry {
            path: name,
            label: bag.label,
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        slides: entries,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)?;
    echo_config(cfg)?;
    println!(
        "wrote {} bags and manifest.json to {} (seed {})",
        bags.len(),
        cfg.out.display(),
        cfg.seed
    );
    Ok(())
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    let slides = synth_pixel_dataset(&cfg.synth(), cfg.slides, cfg.positive_rate, cfg.tile_size)?;
    let pool = tile_pool(&slides, cfg.pretrain_tiles);
    let init = init_encoder(cfg.encoder(), cfg.seed)?;
    let (encoder, history) = pretrain_encoder(&pool, init, cfg.pretrain_epochs, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    save_encoder(&cfg.out.join("encoder.bin"), &encoder)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in history.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", i + 1));
    }
    let csv_path = cfg.out.join("pretrain-history.csv");
    fs::write(&csv_path, csv).map_err(|e| CamilError::io(&csv_path, e))?;
    echo_config(cfg)?;
    match (history.first(), history.last()) {
        (Some(first), Some(last)) => println!(
            "pretrained on {} tiles for {} epochs: loss {first:.4} -> {last:.4}; saved encoder.bin",
            pool.len(),
            history.len()
        ),
        _ => println!("0 epochs requested; saved the initial encoder"),
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!(
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>12}",
        "", "acc", "auc", "f1", "dice", "specificity"
    );
    println!(
        "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>12.4}",
        "mean", report.mean.acc, report.mean.auc, report.mean.f1, report.mean.dice,
        report.mean.specificity
    );
    println!(
        "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>12.4}",
        "std", report.std.acc, report.std.auc, report.std.f1, report.std.dice,
        report.std.specificity
    );
}

pub fn train_cmd(cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let (bags, masks, d) = dataset(cfg, data)?;
    let train_cfg = cfg.train();
    let report = cross_validate(&bags, &masks, cfg.model(d), &train_cfg)?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;

    // Final model for downstream eval/heatmap commands: an 80/20 split of
    // the full dataset, mirroring the per-fold recipe.
    let holdout = kfold_split(bags.len(), 5, cfg.seed)?.remove(0);
    let in_holdout = |i: usize| holdout.contains(&i);
    let pick = |keep: &dyn Fn(usize) -> bool| -> (Vec<FeatureBag>, Vec<SimilarityMask>) {
        let idx: Vec<usize> = (0..bags.len()).filter(|&i| keep(i)).collect();
        (
            idx.iter().map(|&i| bags[i].clone()).collect(),
            idx.iter().map(|&i| masks[i].clone()).collect(),
        )
    };
    let (train_b, train_m) = pick(&|i| !in_holdout(i));
    let (val_b, val_m) = pick(&|i| in_holdout(i));
    let outcome = train(&train_b, &train_m, &val_b, &val_m, cfg.model(d), &train_cfg)?;
    save_model(&cfg.out.join("model.bin"), &outcome.params)?;
    write_history_csv(&cfg.out.join("history.csv"), &outcome.history)?;
    echo_config(cfg)?;

    println!(
        "{}-fold cross-validation of {} on {} slides:",
        train_cfg.folds,
        cfg.variant,
        bags.len()
    );
    print_report(&report);
    println!("saved report.json, model.bin, history.csv to {}", cfg.out.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, data: Option<&Path>, model: Option<&Path>) -> Result<()> {
    let (bags, masks, d) = dataset(cfg, data)?;
    let params = load_or_init(cfg, model, d)?;
    let metrics = evaluate(&bags, &masks, &params)?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("eval.json"), &metrics)?;
    echo_config(cfg)?;
    let line = serde_json::to_string(&metrics).map_err(|e| {
        CamilError::InvalidArgument(format!("cannot serialize metrics: {e}"))
    })?;
    println!("{line}");
    Ok(())
}

pub fn heatmap(
    cfg: &RunConfig,
    data: Option<&Path>,
    model: Option<&Path>,
    count: usize,
) -> Result<()> {
    let (bags, masks, d) = dataset(cfg, data)?;
    let params = load_or_init(cfg, model, d)?;
    ensure_dir(&cfg.out)?;
    let count = count.min(bags.len());
    for i in 0..count {
        let trace = forward(&bags[i], &masks[i], &params)?;
        let path = cfg.out.join(format!("heat-{i:04}.pgm"));
        heatmap_export(&trace, &bags[i].grid, &path)?;
        println!("{}", path.display());
    }
    echo_config(cfg)?;
    Ok(())
}

pub fn ablate(cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let (bags, masks, d) = dataset(cfg, data)?;
    let mut rows: Vec<(Variant, EvalReport)> = Vec::with_capacity(ALL_VARIANTS.len());
    for variant in ALL_VARIANTS {
        let train_cfg = camil_core::train::TrainConfig {
            variant,
            ..cfg.train()
        };
        // Same seed for every variant, so all five see identical folds.
        let report = cross_validate(&bags, &masks, cfg.model(d), &train_cfg)?;
        rows.push((variant, report));
    }
    ensure_dir(&cfg.out)?;
    let table: Vec<serde_json::Value> = rows
        .iter()
        .map(|(v, r)| {
            serde_json::json!({
                "variant": v.to_string(),
                "mean": r.mean,
                "std": r.std,
                "folds": r.folds,
            })
        })
        .collect();
    write_json(&cfg.out.join("ablate.json"), &table)?;
    echo_config(cfg)?;

    println!(
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>12}",
        "variant", "acc", "auc", "f1", "dice", "specificity"
    );
    for (variant, report) in &rows {
        let m: &MetricSet = &report.mean;
        println!(
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>12.4}",
            variant.to_string(),
            m.acc,
            m.auc,
            m.f1,
            m.dice,
            m.specificity
        );
    }
    Ok(())
}

pub fn gradcheck(seed: Option<u64>, corrupt: bool) -> Result<()> {
    let base = GradCheckConfig::default();
    let mut worst_line = None;
    for variant in ALL_VARIANTS {
        let check = GradCheckConfig {
            variant,
            seed: seed.unwrap_or(base.seed),
            corrupt,
            ..base
        };
        let report = grad_check(&check)?;
        for group in &report.groups {
            println!("{:<8} {:<4} {:>12.3e}", variant.to_string(), group.name, group.max_rel);
        }
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{:<8} worst {:.3e} (tolerance {:.0e}) {verdict}",
            variant.to_string(),
            report.worst,
            report.tolerance
        );
        if !report.passed() && worst_line.is_none() {
            worst_line = Some(format!(
                "gradient check failed for {variant}: worst relative error {:.3e} exceeds {:.0e}",
                report.worst, report.tolerance
            ));
        }
    }
    match worst_line {
        Some(msg) => Err(CamilError::Invariant(msg)),
        None => Ok(()),
    }
}
