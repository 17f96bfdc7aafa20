//! SimCLR-style pretraining at desk scale: a two-layer perceptron encoder on
//! raw pixel tiles, a linear projection head, stochastic tile augmentations,
//! and the NT-Xent loss over batches of positive view pairs.
//!
//! The encoder's backbone output (without the projection head) is what
//! downstream feature bags consume; the head exists only for the loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CamilError, Result};
use crate::model::xavier;
use crate::optim::{Adam, AdamConfig, ParamSet, ParamTensor};
use crate::seed::splitmix64;
use crate::tape::Tape;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EncoderConfig {
    /// Flattened pixel count of one square tile.
    pub input: usize,
    pub hidden: usize,
    /// Backbone output width; this is the feature dimension bags receive.
    pub embed: usize,
    /// Projection head output width, used only inside the contrastive loss.
    pub proj: usize,
    pub tau: f64,
}

impl EncoderConfig {
    /// Defaults the head to half the embedding width and tau to 0.5.
    pub fn new(input: usize, hidden: usize, embed: usize) -> EncoderConfig {
        EncoderConfig {
            input,
            hidden,
            embed,
            proj: (embed / 2).max(1),
            tau: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input", self.input),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("proj", self.proj),
        ] {
            if v == 0 {
                return Err(CamilError::InvalidArgument(format!(
                    "encoder {name} dimension must be positive"
                )));
            }
        }
        if self.tau <= 0.0 {
            return Err(CamilError::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Two affine layers with a tanh between them (pixels -> embed), then one
/// affine projection (embed -> proj). Tensor order is the ParamSet contract.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub seed: u64,
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    pub wp: ParamTensor,
    pub bp: ParamTensor,
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.wp, &self.bp]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wp,
            &mut self.bp,
        ]
    }
}

/// Xavier-uniform weights, zero biases, drawn in tensor order.
pub fn init_encoder(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    Ok(EncoderParams {
        config,
        seed,
        w1: ParamTensor::new("w1", xavier(config.hidden, config.input, &mut rng)),
        b1: ParamTensor::new("b1", Matrix::zeros(1, config.hidden)),
        w2: ParamTensor::new("w2", xavier(config.embed, config.hidden, &mut rng)),
        b2: ParamTensor::new("b2", Matrix::zeros(1, config.embed)),
        wp: ParamTensor::new("wp", xavier(config.proj, config.embed, &mut rng)),
        bp: ParamTensor::new("bp", Matrix::zeros(1, config.proj)),
    })
}

/// Quarter turn counterclockwise of a square tile.
pub fn rotate90(tile: &Matrix) -> Result<Matrix> {
    let n = require_square(tile)?;
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, tile.get(c, n - 1 - r));
        }
    }
    Ok(out)
}

/// Mirror across the vertical axis.
pub fn reflect_h(tile: &Matrix) -> Result<Matrix> {
    let n = require_square(tile)?;
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, tile.get(r, n - 1 - c));
        }
    }
    Ok(out)
}

/// Center crop to `factor` of the side length, then nearest-neighbor resize
/// back to the original size. `factor` must lie in (0, 1].
pub fn zoom(tile: &Matrix, factor: f64) -> Result<Matrix> {
    let n = require_square(tile)?;
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(CamilError::InvalidArgument(format!(
            "zoom factor must be in (0, 1], got {factor}"
        )));
    }
    let crop = ((n as f64 * factor).round() as usize).clamp(1, n);
    let offset = (n - crop) / 2;
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        let sr = offset + r * crop / n;
        for c in 0..n {
            let sc = offset + c * crop / n;
            out.set(r, c, tile.get(sr, sc));
        }
    }
    Ok(out)
}

/// Additive brightness shift, clamped to the unit intensity range.
pub fn jitter(tile: &Matrix, delta: f64) -> Result<Matrix> {
    tile.map(|v| (v + delta).clamp(0.0, 1.0))
}

#[derive(Clone, Copy)]
enum AugmentKind {
    Jitter,
    Zoom,
    Rotate,
    Reflect,
}

/// One stochastic view of a tile: two distinct augmentation kinds sampled
/// from {intensity jitter, center zoom, rotation by k*90 degrees, horizontal
/// reflection} and applied in the sampled order. Deterministic per seed.
pub fn augment(tile: &Matrix, seed: u64) -> Result<Matrix> {
    require_square(tile)?;
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    let mut kinds = [
        AugmentKind::Jitter,
        AugmentKind::Zoom,
        AugmentKind::Rotate,
        AugmentKind::Reflect,
    ];
    kinds.partial_shuffle(&mut rng, 2);
    let mut out = tile.clone();
    for kind in &kinds[..2] {
        out = match kind {
            AugmentKind::Jitter => jitter(&out, rng.gen::<f64>() * 0.4 - 0.2)?,
            AugmentKind::Zoom => zoom(&out, 0.8)?,
            AugmentKind::Rotate => {
                let k = rng.gen_range(1..=3);
                let mut t = out;
                for _ in 0..k {
                    t = rotate90(&t)?;
                }
                t
            }
            AugmentKind::Reflect => reflect_h(&out)?,
        };
    }
    Ok(out)
}

/// NT-Xent loss over a batch of embeddings where rows 2k and 2k+1 are the two
/// views of tile k. Rows are L2-normalized internally, so the returned
/// gradient is with respect to the raw (pre-normalization) embeddings.
pub fn nt_xent(embeddings: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    let mut tape = Tape::new();
    let e = tape.leaf(embeddings.clone());
    let normed = tape.row_l2_normalize(e)?;
    let sims = tape.matmul_nt(normed, normed)?;
    let loss = tape.nt_xent(sims, tau)?;
    tape.backward(loss)?;
    let value = tape.value(loss).get(0, 0);
    let grad = tape
        .grad(e)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(embeddings.rows(), embeddings.cols()));
    Ok((value, grad))
}

fn flatten_tiles(tiles: &[Matrix], input: usize) -> Result<Vec<Vec<f64>>> {
    tiles
        .iter()
        .map(|t| {
            if t.rows() * t.cols() != input {
                return Err(CamilError::shape(
                    "tile pixels vs encoder input",
                    (t.rows(), t.cols()),
                    (1, input),
                ));
            }
            Ok(t.data().to_vec())
        })
        .collect()
}

struct EncoderPass {
    tape: Tape,
    param_nodes: Vec<usize>,
    projection: usize,
}

/// Backbone + head on tape: rows of `x` flow through
/// tanh(x W1^T + b1) W2^T + b2, then the projection affine.
fn forward_on_tape(x: Matrix, params: &EncoderParams) -> Result<EncoderPass> {
    let mut tape = Tape::new();
    let param_nodes: Vec<usize> = params
        .tensors()
        .iter()
        .map(|p| tape.leaf(p.value.clone()))
        .collect();
    let x = tape.constant(x);
    let a1 = tape.matmul_nt(x, param_nodes[0])?;
    let a1 = tape.add_row_broadcast(a1, param_nodes[1])?;
    let h1 = tape.tanh(a1)?;
    let e = tape.matmul_nt(h1, param_nodes[2])?;
    let e = tape.add_row_broadcast(e, param_nodes[3])?;
    let p = tape.matmul_nt(e, param_nodes[4])?;
    let p = tape.add_row_broadcast(p, param_nodes[5])?;
    Ok(EncoderPass {
        tape,
        param_nodes,
        projection: p,
    })
}

/// Full-batch Adam on the contrastive loss: every epoch draws two fresh views
/// of each tile, stacks them, and takes one optimizer step. Returns the
/// trained params together with the per-epoch loss history.
pub fn pretrain_encoder(
    tiles: &[Matrix],
    mut params: EncoderParams,
    epochs: usize,
    seed: u64,
) -> Result<(EncoderParams, Vec<f64>)> {
    if tiles.len() < 2 {
        return Err(CamilError::InvalidArgument(format!(
            "contrastive pretraining needs at least 2 tiles, got {}",
            tiles.len()
        )));
    }
    params.config.validate()?;
    let input = params.config.input;
    let tau = params.config.tau;
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3));
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut rows = Vec::with_capacity(2 * tiles.len());
        for tile in tiles {
            for _ in 0..2 {
                rows.push(augment(tile, rng.gen::<u64>())?);
            }
        }
        let flat = flatten_tiles(&rows, input)?;
        let x = Matrix::from_rows(flat)?;
        let mut pass = forward_on_tape(x, &params)?;
        let normed = pass.tape.row_l2_normalize(pass.projection)?;
        let sims = pass.tape.matmul_nt(normed, normed)?;
        let loss = pass.tape.nt_xent(sims, tau)?;
        pass.tape.backward(loss)?;
        history.push(pass.tape.value(loss).get(0, 0));
        for (tensor, &node) in params.tensors_mut().iter_mut().zip(&pass.param_nodes) {
            if let Some(g) = pass.tape.grad(node) {
                let sum = tensor.grad.add(g)?;
                tensor.grad = sum;
            }
        }
        adam.step(&mut params)?;
    }
    Ok((params, history))
}

/// Backbone features for a batch of tiles: the projection head is dropped at
/// encode time. No augmentation is applied, so the output is deterministic.
pub fn encode(tiles: &[Matrix], params: &EncoderParams) -> Result<Matrix> {
    params.config.validate()?;
    let flat = flatten_tiles(tiles, params.config.input)?;
    let x = Matrix::from_rows(flat)?;
    let h1 = add_row(&x.matmul_nt(&params.w1.value)?, &params.b1.value)?.map(f64::tanh)?;
    add_row(&h1.matmul_nt(&params.w2.value)?, &params.b2.value)
}

fn add_row(x: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != 1 || b.cols() != x.cols() {
        return Err(CamilError::shape("bias broadcast", x.shape(), b.shape()));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (v, bv) in out.row_mut(i).iter_mut().zip(b.row(0)) {
            *v += bv;
        }
    }
    Ok(out)
}

fn require_square(tile: &Matrix) -> Result<usize> {
    if tile.rows() != tile.cols() || tile.rows() == 0 {
        return Err(CamilError::InvalidArgument(format!(
            "augmentations need a square tile, got {:?}",
            tile.shape()
        )));
    }
    Ok(tile.rows())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct EncoderHeader {
    config: EncoderConfig,
    seed: u64,
    tensor_shapes: Vec<(usize, usize)>,
}

pub fn save_encoder(path: &Path, params: &EncoderParams) -> Result<()> {
    let header = EncoderHeader {
        config: params.config,
        seed: params.seed,
        tensor_shapes: params.tensors().iter().map(|p| p.value.shape()).collect(),
    };
    let payload: Vec<f64> = params
        .tensors()
        .iter()
        .flat_map(|p| p.value.data().iter().copied())
        .collect();
    crate::bagio::write_container(path, crate::bagio::ENCODER_MAGIC, &header, &payload)
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    let (header, payload): (EncoderHeader, Vec<f64>) =
        crate::bagio::read_container(path, crate::bagio::ENCODER_MAGIC)?;
    let mut params = init_encoder(header.config, header.seed)?;
    {
        let mut tensors = params.tensors_mut();
        if header.tensor_shapes.len() != tensors.len() {
            return Err(CamilError::Parse {
                offset: 9,
                message: format!(
                    "checkpoint holds {} tensors, the encoder has {}",
                    header.tensor_shapes.len(),
                    tensors.len()
                ),
            });
        }
        let expected: usize = header.tensor_shapes.iter().map(|&(r, c)| r * c).sum();
        if payload.len() != expected {
            return Err(CamilError::Parse {
                offset: 9,
                message: format!(
                    "payload holds {} values, shapes require {expected}",
                    payload.len()
                ),
            });
        }
        let mut offset = 0;
        for (p, &(r, c)) in tensors.iter_mut().zip(&header.tensor_shapes) {
            if p.value.shape() != (r, c) {
                return Err(CamilError::shape("checkpoint tensor", (r, c), p.value.shape()));
            }
            let chunk = &payload[offset..offset + r * c];
            p.value = Matrix::from_vec(r, c, chunk.to_vec())?;
            offset += r * c;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::finite_diff_grad;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_tile(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        Matrix::from_vec(n, n, data).unwrap()
    }

    /// Two texture families so the contrastive task has structure to learn:
    /// even tiles are smooth ramps, odd tiles carry a checkerboard.
    fn texture_tiles(count: usize, n: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let base = 0.3 + 0.4 * rng.gen::<f64>();
                let mut tile = Matrix::zeros(n, n);
                for r in 0..n {
                    for c in 0..n {
                        let texture = if i % 2 == 0 {
                            0.2 * (r + c) as f64 / (2 * n) as f64
                        } else {
                            0.15 * if (r + c) % 2 == 0 { 1.0 } else { -1.0 }
                        };
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        tile.set(r, c, (base + texture + 0.02 * noise).clamp(0.0, 1.0));
                    }
                }
                tile
            })
            .collect()
    }

    #[test]
    fn single_pair_loss_is_exactly_zero() {
        let e = random_matrix(2, 5, 3);
        let (loss, grad) = nt_xent(&e, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn orthogonal_pairs_match_the_scalar_evaluation() {
        // Views within each pair identical, the two pairs orthogonal, tau 1:
        // every term is -ln(e / (e + 2)).
        let e = Matrix::from_rows(vec![
            vec![2.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
            vec![0.0, -0.5, 0.0],
            vec![0.0, -0.5, 0.0],
        ])
        .unwrap();
        let (loss, _) = nt_xent(&e, 1.0).unwrap();
        let expected = ((1.0f64).exp() + 2.0).ln() - 1.0;
        assert!((loss - expected).abs() < 1e-9, "loss {loss} vs {expected}");
    }

    #[test]
    fn swapping_views_within_pairs_keeps_the_loss() {
        let e = random_matrix(6, 4, 11);
        let mut swapped = e.clone();
        for k in 0..3 {
            for c in 0..4 {
                let a = e.get(2 * k, c);
                let b = e.get(2 * k + 1, c);
                swapped.set(2 * k, c, b);
                swapped.set(2 * k + 1, c, a);
            }
        }
        let (l1, _) = nt_xent(&e, 0.5).unwrap();
        let (l2, _) = nt_xent(&swapped, 0.5).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn global_rotation_of_embeddings_keeps_the_loss() {
        let e = random_matrix(6, 4, 17);
        // Orthogonal map: Givens rotations in planes (0,1) and (2,3).
        let (s1, c1) = (0.7f64.sin(), 0.7f64.cos());
        let (s2, c2) = (1.3f64.sin(), 1.3f64.cos());
        let rot = Matrix::from_rows(vec![
            vec![c1, -s1, 0.0, 0.0],
            vec![s1, c1, 0.0, 0.0],
            vec![0.0, 0.0, c2, -s2],
            vec![0.0, 0.0, s2, c2],
        ])
        .unwrap();
        let rotated = e.matmul_nt(&rot).unwrap();
        let (l1, _) = nt_xent(&e, 0.5).unwrap();
        let (l2, _) = nt_xent(&rotated, 0.5).unwrap();
        assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let e = random_matrix(4, 3, 23);
        let (_, grad) = nt_xent(&e, 0.5).unwrap();
        let eps = 1e-6;
        for r in 0..4 {
            for c in 0..3 {
                let mut plus = e.clone();
                plus.set(r, c, e.get(r, c) + eps);
                let mut minus = e.clone();
                minus.set(r, c, e.get(r, c) - eps);
                let (lp, _) = nt_xent(&plus, 0.5).unwrap();
                let (lm, _) = nt_xent(&minus, 0.5).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                let g = grad.get(r, c);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-4, "entry ({r},{c}): analytic {g} vs fd {fd}");
            }
        }
    }

    #[test]
    fn temperature_must_be_positive() {
        let e = random_matrix(2, 3, 5);
        assert!(matches!(
            nt_xent(&e, 0.0),
            Err(CamilError::InvalidArgument(_))
        ));
    }

    #[test]
    fn four_quarter_turns_compose_to_identity() {
        let tile = random_tile(5, 29);
        let mut out = tile.clone();
        for _ in 0..4 {
            out = rotate90(&out).unwrap();
        }
        assert_eq!(out.data(), tile.data());
    }

    #[test]
    fn reflection_is_an_involution() {
        let tile = random_tile(6, 31);
        let back = reflect_h(&reflect_h(&tile).unwrap()).unwrap();
        assert_eq!(back.data(), tile.data());
    }

    #[test]
    fn zoom_keeps_shape_and_intensity_range() {
        let tile = random_tile(8, 37);
        let out = zoom(&tile, 0.8).unwrap();
        assert_eq!(out.shape(), (8, 8));
        let (lo, hi) = tile
            .data()
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        assert!(matches!(
            zoom(&tile, 0.0),
            Err(CamilError::InvalidArgument(_))
        ));
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let tile = random_tile(8, 41);
        let a = augment(&tile, 99).unwrap();
        let b = augment(&tile, 99).unwrap();
        assert_eq!(a.data(), b.data());
        let c = augment(&tile, 100).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn augment_rejects_non_square_tiles() {
        let tile = Matrix::zeros(2, 3);
        assert!(matches!(
            augment(&tile, 1),
            Err(CamilError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_epochs_leave_params_untouched() {
        let cfg = EncoderConfig::new(16, 8, 6);
        let init = init_encoder(cfg, 7).unwrap();
        let tiles = texture_tiles(4, 4, 7);
        let (out, history) = pretrain_encoder(&tiles, init.clone(), 0, 13).unwrap();
        assert!(history.is_empty());
        for (a, b) in init.tensors().iter().zip(out.tensors()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn pretraining_reduces_the_loss_on_a_small_tile_set() {
        let cfg = EncoderConfig::new(36, 24, 8);
        let init = init_encoder(cfg, 3).unwrap();
        let tiles = texture_tiles(64, 6, 19);
        let (_, history) = pretrain_encoder(&tiles, init, 50, 5).unwrap();
        assert_eq!(history.len(), 50);
        assert!(
            history[49] < history[0],
            "loss went {} -> {}",
            history[0],
            history[49]
        );
    }

    #[test]
    fn pretraining_is_deterministic() {
        let cfg = EncoderConfig::new(16, 8, 6);
        let tiles = texture_tiles(6, 4, 43);
        let run = |_| {
            let init = init_encoder(cfg, 7).unwrap();
            pretrain_encoder(&tiles, init, 5, 13).unwrap()
        };
        let (p1, h1) = run(());
        let (p2, h2) = run(());
        assert_eq!(h1, h2);
        for (a, b) in p1.tensors().iter().zip(p2.tensors()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn pretraining_needs_at_least_two_tiles() {
        let cfg = EncoderConfig::new(16, 8, 6);
        let init = init_encoder(cfg, 7).unwrap();
        let tiles = texture_tiles(1, 4, 3);
        assert!(matches!(
            pretrain_encoder(&tiles, init, 1, 13),
            Err(CamilError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_weight_encoder_yields_zero_features() {
        let cfg = EncoderConfig::new(16, 8, 6);
        let mut params = init_encoder(cfg, 7).unwrap();
        for t in params.tensors_mut() {
            t.value.data_mut().fill(0.0);
        }
        let tiles = texture_tiles(3, 4, 47);
        let features = encode(&tiles, &params).unwrap();
        assert_eq!(features.shape(), (3, 6));
        assert_eq!(features.max_abs(), 0.0);
    }

    #[test]
    fn encode_is_deterministic_and_ignores_the_head() {
        let cfg = EncoderConfig::new(16, 8, 6);
        let mut params = init_encoder(cfg, 7).unwrap();
        let tiles = texture_tiles(5, 4, 53);
        let a = encode(&tiles, &params).unwrap();
        // The projection head must not influence backbone features.
        params.wp.value.data_mut().fill(9.0);
        params.bp.value.data_mut().fill(-9.0);
        let b = encode(&tiles, &params).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), (5, 6));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = EncoderConfig::new(9, 5, 4);
        let mut params = init_encoder(cfg, 11).unwrap();
        let tiles = texture_tiles(2, 3, 59);
        let x = Matrix::from_rows(flatten_tiles(&tiles, 9).unwrap()).unwrap();

        let mut pass = forward_on_tape(x.clone(), &params).unwrap();
        let normed = pass.tape.row_l2_normalize(pass.projection).unwrap();
        let sims = pass.tape.matmul_nt(normed, normed).unwrap();
        let loss = pass.tape.nt_xent(sims, cfg.tau).unwrap();
        pass.tape.backward(loss).unwrap();
        let analytic: Vec<Matrix> = pass
            .param_nodes
            .iter()
            .map(|&n| {
                pass.tape
                    .grad(n)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(1, 1))
            })
            .collect();

        let fd = finite_diff_grad(
            &mut params,
            &mut |p: &EncoderParams| -> crate::Result<f64> {
                let mut pass = forward_on_tape(x.clone(), p)?;
                let normed = pass.tape.row_l2_normalize(pass.projection)?;
                let sims = pass.tape.matmul_nt(normed, normed)?;
                let loss = pass.tape.nt_xent(sims, cfg.tau)?;
                Ok(pass.tape.value(loss).get(0, 0))
            },
            1e-5,
        )
        .unwrap();

        for (g, f) in analytic.iter().zip(&fd) {
            for (a, b) in g.data().iter().zip(f.data()) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                assert!(rel <= 1e-4, "analytic {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoder.bin");
        let cfg = EncoderConfig::new(16, 8, 6);
        let init = init_encoder(cfg, 7).unwrap();
        let tiles = texture_tiles(4, 4, 61);
        let (trained, _) = pretrain_encoder(&tiles, init, 3, 13).unwrap();
        save_encoder(&path, &trained).unwrap();
        let back = load_encoder(&path).unwrap();
        assert_eq!(back.config, trained.config);
        for (a, b) in trained.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }
}
