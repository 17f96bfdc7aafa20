//! Tile layout of a slide and the sparse neighborhood similarity mask built
//! over it. Tiles live on a grid; two tissue tiles are neighbors when their
//! grid coordinates differ by at most one in each axis.

use crate::error::{CamilError, Result};
use crate::tensor::{dot, Matrix};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::str::FromStr;

/// Tissue tiles of one slide, kept sorted row-major so a tile's position in
/// `tiles` is its feature-row index everywhere else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TileGrid {
    pub slide_id: String,
    pub grid_width: usize,
    pub grid_height: usize,
    tiles: Vec<(usize, usize)>,
}

impl TileGrid {
    /// Sorts row-major and drops duplicates; rejects out-of-range tiles.
    pub fn new(
        slide_id: impl Into<String>,
        grid_width: usize,
        grid_height: usize,
        mut tiles: Vec<(usize, usize)>,
    ) -> Result<TileGrid> {
        for &(r, c) in &tiles {
            if r >= grid_height || c >= grid_width {
                return Err(CamilError::InvalidArgument(format!(
                    "tile ({r},{c}) outside {grid_height}x{grid_width} grid"
                )));
            }
        }
        tiles.sort_unstable();
        tiles.dedup();
        Ok(TileGrid {
            slide_id: slide_id.into(),
            grid_width,
            grid_height,
            tiles,
        })
    }

    /// Every grid position is tissue.
    pub fn full(slide_id: impl Into<String>, grid_width: usize, grid_height: usize) -> TileGrid {
        let tiles = (0..grid_height)
            .flat_map(|r| (0..grid_width).map(move |c| (r, c)))
            .collect();
        TileGrid {
            slide_id: slide_id.into(),
            grid_width,
            grid_height,
            tiles,
        }
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[(usize, usize)] {
        &self.tiles
    }

    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        self.tiles.binary_search(&(row, col)).ok()
    }
}

/// One slide's instances: tile features (row i belongs to `grid.tiles()[i]`),
/// the slide label, and, for synthetic data, per-tile ground truth.
#[derive(Debug, Clone)]
pub struct FeatureBag {
    pub grid: TileGrid,
    pub features: Matrix,
    pub label: usize,
    pub tile_labels: Option<Vec<bool>>,
}

impl FeatureBag {
    pub fn new(
        grid: TileGrid,
        features: Matrix,
        label: usize,
        tile_labels: Option<Vec<bool>>,
    ) -> Result<FeatureBag> {
        if features.rows() != grid.len() {
            return Err(CamilError::InvalidArgument(format!(
                "{} tiles but {} feature rows",
                grid.len(),
                features.rows()
            )));
        }
        if let Some(ref tl) = tile_labels {
            if tl.len() != grid.len() {
                return Err(CamilError::InvalidArgument(format!(
                    "{} tiles but {} tile labels",
                    grid.len(),
                    tl.len()
                )));
            }
        }
        Ok(FeatureBag {
            grid,
            features,
            label,
            tile_labels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// Euclidean norm of the feature difference.
    L2,
    /// Sum of squared differences.
    Ssd,
}

impl FromStr for Distance {
    type Err = CamilError;

    fn from_str(s: &str) -> Result<Distance> {
        match s {
            "l2" => Ok(Distance::L2),
            "ssd" => Ok(Distance::Ssd),
            other => Err(CamilError::InvalidArgument(format!(
                "unknown distance {other:?}, expected l2 or ssd"
            ))),
        }
    }
}

/// Sparse symmetric neighborhood similarities; each undirected pair is kept
/// once with i < j and a weight in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMask {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl SimilarityMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Mask with no edges, used by bags with a single tissue tile.
    pub fn empty(n: usize) -> SimilarityMask {
        SimilarityMask {
            n,
            edges: Vec::new(),
        }
    }
}

/// Undirected neighbor pairs (tile indexes, i < j) under the
/// one-step-in-any-direction neighborhood, honoring holes in the tissue map.
/// A full R×C grid yields 4RC − 3R − 3C + 2 pairs.
pub fn build_adjacency(grid: &TileGrid) -> Vec<(usize, usize)> {
    let index: HashMap<(usize, usize), usize> = grid
        .tiles()
        .iter()
        .enumerate()
        .map(|(i, &rc)| (rc, i))
        .collect();
    let mut edges = Vec::new();
    for (i, &(r, c)) in grid.tiles().iter().enumerate() {
        // Only offsets that land strictly later in row-major order, so each
        // pair is generated once.
        let forward = [
            (r, c + 1),
            (r + 1, c.wrapping_sub(1)),
            (r + 1, c),
            (r + 1, c + 1),
        ];
        for rc in forward {
            if let Some(&j) = index.get(&rc) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Adjacency plus similarity in one step, on the bag's own features.
pub fn bag_similarity(bag: &FeatureBag, distance: Distance) -> Result<SimilarityMask> {
    let edges = build_adjacency(&bag.grid);
    similarity_mask(&bag.features, &edges, distance)
}

/// Similarity weights over the given neighbor pairs:
/// s = exp(−distance(h_i, h_j)), which lies in (0, 1].
pub fn similarity_mask(
    features: &Matrix,
    edges: &[(usize, usize)],
    distance: Distance,
) -> Result<SimilarityMask> {
    let n = features.rows();
    let mut out = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(CamilError::InvalidArgument(format!(
                "edge ({i},{j}) out of range for {n} tiles"
            )));
        }
        let diff: Vec<f64> = features
            .row(i)
            .iter()
            .zip(features.row(j))
            .map(|(a, b)| a - b)
            .collect();
        let ssd = dot(&diff, &diff);
        let d = match distance {
            Distance::L2 => ssd.sqrt(),
            Distance::Ssd => ssd,
        };
        out.push((i.min(j), i.max(j), (-d).exp()));
    }
    Ok(SimilarityMask { n, edges: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn full_grid_edge_count_matches_closed_form() {
        for (rows, cols) in [(1i64, 1i64), (1, 5), (2, 2), (3, 3), (4, 7)] {
            let grid = TileGrid::full("s", cols as usize, rows as usize);
            let edges = build_adjacency(&grid);
            let expect = 4 * rows * cols - 3 * rows - 3 * cols + 2;
            assert_eq!(edges.len() as i64, expect, "{rows}x{cols}");
        }
    }

    #[test]
    fn corner_tile_has_three_neighbors() {
        let grid = TileGrid::full("s", 3, 3);
        let edges = build_adjacency(&grid);
        let degree = edges.iter().filter(|&&(i, j)| i == 0 || j == 0).count();
        assert_eq!(degree, 3);
        let center = grid.index_of(1, 1).unwrap();
        let center_degree = edges
            .iter()
            .filter(|&&(i, j)| i == center || j == center)
            .count();
        assert_eq!(center_degree, 8);
    }

    #[test]
    fn holes_remove_their_edges() {
        // 2x2 grid missing (1,0): the three remaining tiles are mutually
        // adjacent (the diagonal pair included).
        let grid = TileGrid::new("s", 2, 2, vec![(0, 0), (0, 1), (1, 1)]).unwrap();
        let edges = build_adjacency(&grid);
        assert_eq!(edges.len(), 3);
    }

    #[test]
    fn similarity_matches_scalar_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 8;
        let d = 5;
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let features = Matrix::from_vec(n, d, data).unwrap();
        let grid = TileGrid::full("s", 4, 2);
        let edges = build_adjacency(&grid);
        for dist in [Distance::L2, Distance::Ssd] {
            let mask = similarity_mask(&features, &edges, dist).unwrap();
            assert_eq!(mask.n(), n);
            for (&(i, j), &(mi, mj, s)) in edges.iter().zip(mask.edges()) {
                assert_eq!((i, j), (mi, mj));
                let mut ssd = 0.0;
                for k in 0..d {
                    let diff = features.get(i, k) - features.get(j, k);
                    ssd += diff * diff;
                }
                let expect = match dist {
                    Distance::L2 => (-ssd.sqrt()).exp(),
                    Distance::Ssd => (-ssd).exp(),
                };
                assert!((s - expect).abs() < 1e-12);
                assert!(s > 0.0 && s <= 1.0);
            }
        }
    }

    #[test]
    fn distance_ln2_gives_similarity_half() {
        let features = Matrix::from_rows(vec![
            vec![0.0, 0.0],
            vec![std::f64::consts::LN_2, 0.0],
        ])
        .unwrap();
        let mask = similarity_mask(&features, &[(0, 1)], Distance::L2).unwrap();
        assert!((mask.edges()[0].2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_features_give_similarity_one() {
        let features = Matrix::from_rows(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let mask = similarity_mask(&features, &[(0, 1)], Distance::L2).unwrap();
        assert_eq!(mask.edges()[0].2, 1.0);
    }

    #[test]
    fn grid_constructor_sorts_dedups_and_validates() {
        let grid = TileGrid::new("s", 3, 3, vec![(2, 1), (0, 0), (2, 1), (0, 2)]).unwrap();
        assert_eq!(grid.tiles(), &[(0, 0), (0, 2), (2, 1)]);
        assert_eq!(grid.index_of(2, 1), Some(2));
        assert_eq!(grid.index_of(1, 1), None);
        assert!(TileGrid::new("s", 3, 3, vec![(3, 0)]).is_err());
    }

    #[test]
    fn bag_shape_mismatches_are_errors() {
        let grid = TileGrid::full("s", 2, 2);
        let features = Matrix::zeros(3, 4);
        assert!(FeatureBag::new(grid.clone(), features, 0, None).is_err());
        let features = Matrix::zeros(4, 4);
        assert!(FeatureBag::new(grid.clone(), features.clone(), 0, Some(vec![true; 3])).is_err());
        assert!(FeatureBag::new(grid, features, 1, Some(vec![false; 4])).is_ok());
    }
}
