//! Synthetic slide generator. Positive slides carry a few connected tumor
//! blobs; negative slides carry scattered isolated distractor tiles drawn
//! from the tumor feature distribution but labeled normal. Slide-level
//! labels are therefore easy to read off tile statistics alone only up to a
//! point: beating that ceiling requires using the spatial arrangement.

use crate::error::{CamilError, Result};
use crate::grid::{bag_similarity, Distance, FeatureBag, SimilarityMask, TileGrid};
use crate::seed::splitmix64;
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct SynthConfig {
    pub grid_size: usize,
    pub d: usize,
    pub tumor_fraction: f64,
    pub blob_count: usize,
    pub feature_shift: f64,
    pub noise_sigma: f64,
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            grid_size: 20,
            d: 16,
            tumor_fraction: 0.05,
            blob_count: 2,
            feature_shift: 0.9,
            noise_sigma: 0.45,
            distractor_rate: 0.02,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(CamilError::InvalidArgument("grid-size must be positive".into()));
        }
        if self.d == 0 {
            return Err(CamilError::InvalidArgument("d must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tumor_fraction) {
            return Err(CamilError::InvalidArgument(format!(
                "tumor-fraction must lie in [0, 1], got {}",
                self.tumor_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return Err(CamilError::InvalidArgument(format!(
                "distractor-rate must lie in [0, 1), got {}",
                self.distractor_rate
            )));
        }
        if self.blob_count == 0 {
            return Err(CamilError::InvalidArgument("blob-count must be positive".into()));
        }
        if self.noise_sigma <= 0.0 {
            return Err(CamilError::InvalidArgument(format!(
                "noise-sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if self.feature_shift < 0.0 {
            return Err(CamilError::InvalidArgument(format!(
                "feature-shift must be non-negative, got {}",
                self.feature_shift
            )));
        }
        let n_tumor = self.tumor_tiles();
        if n_tumor < self.blob_count {
            return Err(CamilError::InvalidArgument(format!(
                "tumor-fraction {} yields {n_tumor} tumor tiles, fewer than blob-count {}",
                self.tumor_fraction, self.blob_count
            )));
        }
        Ok(())
    }

    pub fn tumor_tiles(&self) -> usize {
        (self.tumor_fraction * (self.grid_size * self.grid_size) as f64).round() as usize
    }

    pub fn distractor_tiles(&self) -> usize {
        (self.distractor_rate * (self.grid_size * self.grid_size) as f64).round() as usize
    }
}

/// Ground-truth cell placement for one slide, sorted row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlideLayout {
    pub tumor: Vec<(usize, usize)>,
    pub distractors: Vec<(usize, usize)>,
}

/// The layout the generator uses for slide `index` with the given label.
pub fn layout_for(cfg: &SynthConfig, index: usize, positive: bool) -> Result<SlideLayout> {
    let mut rng = slide_rng(cfg, index);
    layout_with(cfg, positive, &mut rng)
}

fn slide_rng(cfg: &SynthConfig, index: usize) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(cfg.seed ^ index as u64)
}

fn layout_with(cfg: &SynthConfig, positive: bool, rng: &mut ChaCha12Rng) -> Result<SlideLayout> {
    let g = cfg.grid_size;
    if positive {
        let mut tumor = grow_blobs(g, cfg.tumor_tiles(), cfg.blob_count, rng);
        tumor.sort_unstable();
        Ok(SlideLayout {
            tumor,
            distractors: Vec::new(),
        })
    } else {
        let mut distractors = scatter_isolated(g, cfg.distractor_tiles(), rng)?;
        distractors.sort_unstable();
        Ok(SlideLayout {
            tumor: Vec::new(),
            distractors,
        })
    }
}

/// Grows `blob_count` blobs to `total` cells by repeatedly annexing a random
/// edge-adjacent frontier cell, which keeps each blob connected. Blob order
/// and frontier order are deterministic, so the result depends only on the
/// generator state.
fn grow_blobs(g: usize, total: usize, blob_count: usize, rng: &mut ChaCha12Rng) -> Vec<(usize, usize)> {
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(total);
    let base = total / blob_count;
    let extra = total % blob_count;
    for b in 0..blob_count {
        let want = base + usize::from(b < extra);
        if want == 0 {
            continue;
        }
        let start = loop {
            let cell = (rng.gen_range(0..g), rng.gen_range(0..g));
            if !taken.contains(&cell) {
                break cell;
            }
        };
        let mut blob: Vec<(usize, usize)> = vec![start];
        taken.insert(start);
        while blob.len() < want {
            let mut frontier = Vec::new();
            let mut seen = HashSet::new();
            for &(r, c) in &blob {
                for (nr, nc) in [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ] {
                    if nr < g && nc < g && !taken.contains(&(nr, nc)) && seen.insert((nr, nc)) {
                        frontier.push((nr, nc));
                    }
                }
            }
            let cell = if frontier.is_empty() {
                // The blob is walled in by earlier blobs; fall back to any
                // free cell to keep the total exact.
                loop {
                    let cell = (rng.gen_range(0..g), rng.gen_range(0..g));
                    if !taken.contains(&cell) {
                        break cell;
                    }
                }
            } else {
                frontier[rng.gen_range(0..frontier.len())]
            };
            taken.insert(cell);
            blob.push(cell);
        }
        out.extend(blob);
    }
    out
}

/// Places `count` cells no two of which touch, even diagonally.
fn scatter_isolated(
    g: usize,
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<(usize, usize)>> {
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while cells.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(CamilError::InvalidArgument(format!(
                "cannot place {count} isolated distractors on a {g}x{g} grid"
            )));
        }
        let cell = (rng.gen_range(0..g), rng.gen_range(0..g));
        let clash = cells.iter().any(|&(r, c)| {
            r.abs_diff(cell.0) <= 1 && c.abs_diff(cell.1) <= 1
        });
        if !clash {
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Generates `n_slides` bags. Exactly round(n_slides · positive_rate) are
/// positive, their order shuffled by a stream independent of per-slide
/// feature noise.
pub fn synth_dataset(
    cfg: &SynthConfig,
    n_slides: usize,
    positive_rate: f64,
) -> Result<Vec<FeatureBag>> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&positive_rate) {
        return Err(CamilError::InvalidArgument(format!(
            "positive-rate must lie in [0, 1], got {positive_rate}"
        )));
    }
    let labels = slide_labels(cfg.seed, n_slides, positive_rate);
    let mut bags = Vec::with_capacity(n_slides);
    for (index, &positive) in labels.iter().enumerate() {
        let mut rng = slide_rng(cfg, index);
        let layout = layout_with(cfg, positive, &mut rng)?;
        bags.push(feature_bag(cfg, index, positive, &layout, &mut rng)?);
    }
    Ok(bags)
}

fn slide_labels(seed: u64, n_slides: usize, positive_rate: f64) -> Vec<bool> {
    let n_pos = (n_slides as f64 * positive_rate).round() as usize;
    let mut labels: Vec<bool> = (0..n_slides).map(|i| i < n_pos.min(n_slides)).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    labels.shuffle(&mut rng);
    labels
}

fn feature_bag(
    cfg: &SynthConfig,
    index: usize,
    positive: bool,
    layout: &SlideLayout,
    rng: &mut ChaCha12Rng,
) -> Result<FeatureBag> {
    let g = cfg.grid_size;
    let grid = TileGrid::full(format!("synth-{index:04}"), g, g);
    let hot: HashSet<(usize, usize)> = if positive {
        layout.tumor.iter().copied().collect()
    } else {
        layout.distractors.iter().copied().collect()
    };
    // Tumor and distractor features shift along the normalized all-ones
    // direction; everything else is isotropic noise.
    let shift_coord = cfg.feature_shift / (cfg.d as f64).sqrt();
    let mut features = Matrix::zeros(grid.len(), cfg.d);
    let mut tile_labels = vec![false; grid.len()];
    for (i, &(r, c)) in grid.tiles().iter().enumerate() {
        let is_hot = hot.contains(&(r, c));
        tile_labels[i] = positive && is_hot;
        for k in 0..cfg.d {
            let noise: f64 = rng.sample(StandardNormal);
            features.set(
                i,
                k,
                cfg.noise_sigma * noise + if is_hot { shift_coord } else { 0.0 },
            );
        }
    }
    FeatureBag::new(grid, features, usize::from(positive), Some(tile_labels))
}

/// A bag of n standard-normal feature rows on a compact grid, paired with
/// its similarity mask. Used by gradient checks and benchmarks, where the
/// content only has to be generic, not class-structured.
pub fn probe_bag(n: usize, d: usize, seed: u64) -> Result<(FeatureBag, SimilarityMask)> {
    if n == 0 || d == 0 {
        return Err(CamilError::InvalidArgument(format!(
            "probe bag needs positive dimensions, got {n}x{d}"
        )));
    }
    let width = (n as f64).sqrt().ceil() as usize;
    let height = n.div_ceil(width);
    let cells: Vec<(usize, usize)> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .take(n)
        .collect();
    let grid = TileGrid::new(format!("probe-{n}x{d}-{seed}"), width, height, cells)?;
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    let data = (0..n * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let features = Matrix::from_vec(n, d, data)?;
    let bag = FeatureBag::new(grid, features, 1, None)?;
    let mask = bag_similarity(&bag, Distance::L2)?;
    Ok((bag, mask))
}

/// One slide rendered as pixel tiles instead of feature vectors, for the
/// self-supervised pipeline. Values lie in [0, 1].
#[derive(Debug, Clone)]
pub struct PixelSlide {
    pub grid: TileGrid,
    pub tiles: Vec<Matrix>,
    pub label: usize,
    pub tile_labels: Vec<bool>,
}

/// Pixel twin of [`synth_dataset`]: same layouts and labels for the same
/// config. Tumor and distractor tiles carry a checkerboard texture; every
/// tile sits on its own random brightness, a nuisance factor that texture
/// statistics ignore.
pub fn synth_pixel_dataset(
    cfg: &SynthConfig,
    n_slides: usize,
    positive_rate: f64,
    tile_size: usize,
) -> Result<Vec<PixelSlide>> {
    cfg.validate()?;
    if tile_size < 2 {
        return Err(CamilError::InvalidArgument(format!(
            "tile size must be at least 2, got {tile_size}"
        )));
    }
    if !(0.0..=1.0).contains(&positive_rate) {
        return Err(CamilError::InvalidArgument(format!(
            "positive-rate must lie in [0, 1], got {positive_rate}"
        )));
    }
    let labels = slide_labels(cfg.seed, n_slides, positive_rate);
    let mut slides = Vec::with_capacity(n_slides);
    for (index, &positive) in labels.iter().enumerate() {
        let mut rng = slide_rng(cfg, index);
        let layout = layout_with(cfg, positive, &mut rng)?;
        let g = cfg.grid_size;
        let grid = TileGrid::full(format!("synth-{index:04}"), g, g);
        let hot: HashSet<(usize, usize)> = if positive {
            layout.tumor.iter().copied().collect()
        } else {
            layout.distractors.iter().copied().collect()
        };
        let mut tiles = Vec::with_capacity(grid.len());
        let mut tile_labels = vec![false; grid.len()];
        for (i, &(r, c)) in grid.tiles().iter().enumerate() {
            let is_hot = hot.contains(&(r, c));
            tile_labels[i] = positive && is_hot;
            tiles.push(pixel_tile(tile_size, is_hot, &mut rng));
        }
        slides.push(PixelSlide {
            grid,
            tiles,
            label: usize::from(positive),
            tile_labels,
        });
    }
    Ok(slides)
}

fn pixel_tile(tile_size: usize, hot: bool, rng: &mut ChaCha12Rng) -> Matrix {
    let brightness = 0.25 + 0.5 * rng.gen::<f64>();
    let amplitude = if hot { 0.15 } else { 0.0 };
    let mut tile = Matrix::zeros(tile_size, tile_size);
    for r in 0..tile_size {
        for c in 0..tile_size {
            let checker = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            let noise: f64 = rng.sample(StandardNormal);
            let v = brightness + amplitude * checker + 0.05 * noise;
            tile.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    tile
}
