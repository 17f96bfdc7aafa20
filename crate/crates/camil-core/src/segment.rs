//! Tissue detection on slide thumbnails: a global Otsu threshold over the
//! intensity histogram, then a per-tile darkness vote.

use crate::error::{CamilError, Result};
use crate::grid::TileGrid;
use crate::pixmap::Pixmap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtsuResult {
    /// Split point: class 0 is {p < threshold}, class 1 is {p >= threshold}.
    pub threshold: u8,
    /// Set when the image has a single gray level, where every split is
    /// equally (un)informative; the threshold then echoes that level.
    pub degenerate: bool,
}

/// Threshold maximizing between-class variance w0·w1·(μ0−μ1)². Ties resolve
/// to the lowest threshold.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<OtsuResult> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(CamilError::InvalidArgument(
            "histogram of an empty image".into(),
        ));
    }
    let levels: Vec<usize> = (0..256).filter(|&v| histogram[v] > 0).collect();
    if levels.len() == 1 {
        return Ok(OtsuResult {
            threshold: levels[0] as u8,
            degenerate: true,
        });
    }

    let total_f = total as f64;
    let grand_sum: f64 = histogram
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();

    let mut best = (f64::NEG_INFINITY, 0u8);
    let mut count0: u64 = 0;
    let mut sum0: f64 = 0.0;
    for t in 1..=255usize {
        count0 += histogram[t - 1];
        sum0 += (t - 1) as f64 * histogram[t - 1] as f64;
        let count1 = total - count0;
        if count0 == 0 || count1 == 0 {
            continue;
        }
        let w0 = count0 as f64 / total_f;
        let w1 = count1 as f64 / total_f;
        let mu0 = sum0 / count0 as f64;
        let mu1 = (grand_sum - sum0) / count1 as f64;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best.0 {
            best = (var, t as u8);
        }
    }
    Ok(OtsuResult {
        threshold: best.1,
        degenerate: false,
    })
}

/// Splits the image into tile_size² blocks and keeps the tissue ones.
///
/// With a meaningful threshold a tile is tissue when at least half its
/// pixels fall below it (tissue is dark on a bright background). A
/// single-level image carries no contrast to vote on, so it is all tissue
/// when dark (level < 128) and all background when bright.
pub fn segment_tissue(img: &Pixmap, tile_size: usize, slide_id: &str) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(CamilError::InvalidArgument("tile size zero".into()));
    }
    if img.width() % tile_size != 0 || img.height() % tile_size != 0 {
        return Err(CamilError::InvalidArgument(format!(
            "{}x{} image is not a multiple of tile size {tile_size}",
            img.width(),
            img.height()
        )));
    }
    let grid_width = img.width() / tile_size;
    let grid_height = img.height() / tile_size;
    let otsu = otsu_threshold(&img.histogram())?;

    let mut tiles = Vec::new();
    if otsu.degenerate {
        if otsu.threshold < 128 {
            return Ok(TileGrid::full(slide_id, grid_width, grid_height));
        }
        return TileGrid::new(slide_id, grid_width, grid_height, tiles);
    }

    let half = tile_size * tile_size / 2 + (tile_size * tile_size) % 2;
    for tr in 0..grid_height {
        for tc in 0..grid_width {
            let mut dark = 0usize;
            for r in 0..tile_size {
                for c in 0..tile_size {
                    if img.get(tr * tile_size + r, tc * tile_size + c) < otsu.threshold {
                        dark += 1;
                    }
                }
            }
            if dark >= half {
                tiles.push((tr, tc));
            }
        }
    }
    TileGrid::new(slide_id, grid_width, grid_height, tiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(width: usize, height: usize, v: u8) -> Pixmap {
        Pixmap::from_data(width, height, vec![v; width * height]).unwrap()
    }

    #[test]
    fn bimodal_spikes_split_just_above_the_dark_mode() {
        let mut h = [0u64; 256];
        h[10] = 500;
        h[200] = 300;
        let r = otsu_threshold(&h).unwrap();
        assert_eq!(r.threshold, 11);
        assert!(!r.degenerate);
    }

    #[test]
    fn returned_threshold_attains_the_maximum_variance() {
        // Independent recomputation of the objective at every split.
        let variance = |h: &[u64; 256], t: usize| -> f64 {
            let (mut c0, mut s0, mut c1, mut s1) = (0u64, 0.0, 0u64, 0.0);
            for v in 0..256 {
                if v < t {
                    c0 += h[v];
                    s0 += (v * h[v] as usize) as f64;
                } else {
                    c1 += h[v];
                    s1 += (v * h[v] as usize) as f64;
                }
            }
            if c0 == 0 || c1 == 0 {
                return f64::NEG_INFINITY;
            }
            let n = (c0 + c1) as f64;
            let (w0, w1) = (c0 as f64 / n, c1 as f64 / n);
            let d = s0 / c0 as f64 - s1 / c1 as f64;
            w0 * w1 * d * d
        };

        for seed in 0..6u64 {
            let mut h = [0u64; 256];
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            for _ in 0..40 {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let level = (state >> 33) as usize % 256;
                let count = (state >> 20) % 97 + 1;
                h[level] += count;
            }
            let r = otsu_threshold(&h).unwrap();
            let got = variance(&h, r.threshold as usize);
            for t in 1..256 {
                let v = variance(&h, t);
                assert!(
                    v <= got + 1e-9,
                    "seed {seed}: split {t} beats returned {}",
                    r.threshold
                );
                if (v - got).abs() <= 1e-12 {
                    assert!(
                        r.threshold as usize <= t,
                        "seed {seed}: tie must resolve to the lowest split"
                    );
                }
            }
        }
    }

    #[test]
    fn single_level_is_degenerate() {
        let mut h = [0u64; 256];
        h[77] = 100;
        let r = otsu_threshold(&h).unwrap();
        assert_eq!(r.threshold, 77);
        assert!(r.degenerate);
    }

    #[test]
    fn empty_histogram_is_an_error() {
        assert!(otsu_threshold(&[0u64; 256]).is_err());
    }

    #[test]
    fn all_white_slide_has_no_tissue() {
        let grid = segment_tissue(&uniform(512, 512, 255), 256, "w").unwrap();
        assert!(grid.is_empty());
    }

    #[test]
    fn all_black_slide_is_entirely_tissue() {
        let grid = segment_tissue(&uniform(512, 512, 0), 256, "b").unwrap();
        assert_eq!(grid.len(), 4);
    }

    #[test]
    fn half_dark_slide_keeps_the_dark_tiles() {
        let mut img = Pixmap::new(512, 512);
        for r in 0..512 {
            for c in 0..512 {
                img.set(r, c, if c < 256 { 0 } else { 255 });
            }
        }
        let grid = segment_tissue(&img, 256, "h").unwrap();
        assert_eq!(grid.tiles(), &[(0, 0), (1, 0)]);
    }

    #[test]
    fn exactly_half_dark_pixels_count_as_tissue() {
        let mut img = Pixmap::new(2, 2);
        img.set(0, 0, 0);
        img.set(0, 1, 0);
        img.set(1, 0, 255);
        img.set(1, 1, 255);
        let grid = segment_tissue(&img, 2, "t").unwrap();
        assert_eq!(grid.len(), 1);
    }

    #[test]
    fn non_divisible_tile_size_is_an_error() {
        assert!(segment_tissue(&uniform(100, 100, 0), 33, "x").is_err());
    }
}
