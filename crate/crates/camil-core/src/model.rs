//! The slide classifier. A forward pass projects frozen tile features
//! through landmark-approximated self-attention, re-weights tiles by
//! neighborhood-constrained attention, gates the two streams together, and
//! pools with learned attention into one slide embedding.
//!
//! Ablation variants reuse the same trace shape: the local variant skips the
//! self-attention stage, the global variant skips the neighborhood stage,
//! and the mean/max baselines skip everything but the classifier.

use crate::error::{CamilError, Result};
use crate::grid::{FeatureBag, SimilarityMask};
use crate::optim::{finite_diff_grad, ParamSet, ParamTensor};
use crate::seed::splitmix64;
use crate::synth::probe_bag;
use crate::tape::{NodeId, Tape};
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "camil")]
    Camil,
    #[serde(rename = "camil-l")]
    CamilL,
    #[serde(rename = "camil-g")]
    CamilG,
    #[serde(rename = "mean")]
    MeanPool,
    #[serde(rename = "max")]
    MaxPool,
}

impl FromStr for Variant {
    type Err = CamilError;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "camil" => Ok(Variant::Camil),
            "camil-l" => Ok(Variant::CamilL),
            "camil-g" => Ok(Variant::CamilG),
            "mean" => Ok(Variant::MeanPool),
            "max" => Ok(Variant::MaxPool),
            other => Err(CamilError::InvalidArgument(format!(
                "unknown variant {other:?}, expected camil, camil-l, camil-g, mean or max"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Camil => "camil",
            Variant::CamilL => "camil-l",
            Variant::CamilG => "camil-g",
            Variant::MeanPool => "mean",
            Variant::MaxPool => "max",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkStrategy {
    /// Means of contiguous tile segments.
    Segment,
    /// A sorted random sample of tiles, redrawn per bag size from the model
    /// seed.
    Random,
}

impl FromStr for LandmarkStrategy {
    type Err = CamilError;

    fn from_str(s: &str) -> Result<LandmarkStrategy> {
        match s {
            "segment" => Ok(LandmarkStrategy::Segment),
            "random" => Ok(LandmarkStrategy::Random),
            other => Err(CamilError::InvalidArgument(format!(
                "unknown landmark strategy {other:?}, expected segment or random"
            ))),
        }
    }
}

impl fmt::Display for LandmarkStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LandmarkStrategy::Segment => "segment",
            LandmarkStrategy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NystromConfig {
    pub landmarks: usize,
    pub pinv_iters: usize,
    pub strategy: LandmarkStrategy,
}

impl Default for NystromConfig {
    fn default() -> NystromConfig {
        NystromConfig {
            landmarks: 64,
            pinv_iters: 20,
            strategy: LandmarkStrategy::Segment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelConfig {
    pub d: usize,
    pub hdim: usize,
    pub classes: usize,
    pub nystrom: NystromConfig,
}

impl ModelConfig {
    pub fn new(d: usize) -> ModelConfig {
        ModelConfig {
            d,
            hdim: 64,
            classes: 2,
            nystrom: NystromConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hdim == 0 {
            return Err(CamilError::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.classes < 2 {
            return Err(CamilError::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.nystrom.landmarks == 0 {
            return Err(CamilError::InvalidArgument(
                "landmark count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Every trainable tensor, in the fixed order that gradient reports,
/// optimizer state and checkpoints all index by.
pub struct ModelParams {
    pub config: ModelConfig,
    pub variant: Variant,
    pub seed: u64,
    pub wq1: ParamTensor,
    pub wk1: ParamTensor,
    pub wv1: ParamTensor,
    pub wq: ParamTensor,
    pub wk: ParamTensor,
    pub wv: ParamTensor,
    pub u_g: ParamTensor,
    pub v_g: ParamTensor,
    pub w_g: ParamTensor,
    pub wc: ParamTensor,
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![
            &self.wq1, &self.wk1, &self.wv1, &self.wq, &self.wk, &self.wv, &self.u_g, &self.v_g,
            &self.w_g, &self.wc,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.wq1,
            &mut self.wk1,
            &mut self.wv1,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.u_g,
            &mut self.v_g,
            &mut self.w_g,
            &mut self.wc,
        ]
    }
}

impl Clone for ModelParams {
    fn clone(&self) -> ModelParams {
        ModelParams {
            config: self.config,
            variant: self.variant,
            seed: self.seed,
            wq1: self.wq1.clone(),
            wk1: self.wk1.clone(),
            wv1: self.wv1.clone(),
            wq: self.wq.clone(),
            wk: self.wk.clone(),
            wv: self.wv.clone(),
            u_g: self.u_g.clone(),
            v_g: self.v_g.clone(),
            w_g: self.w_g.clone(),
            wc: self.wc.clone(),
        }
    }
}

pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen::<f64>() * 2.0 * bound - bound)
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite init")
}

/// Xavier-uniform weights drawn in tensor order; the pooling head's final
/// weight starts at zero so attention starts uniform.
pub fn init_params(config: ModelConfig, variant: Variant, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    let d = config.d;
    let hdim = config.hdim;
    let c = config.classes;
    Ok(ModelParams {
        config,
        variant,
        seed,
        wq1: ParamTensor::new("wq1", xavier(d, d, &mut rng)),
        wk1: ParamTensor::new("wk1", xavier(d, d, &mut rng)),
        wv1: ParamTensor::new("wv1", xavier(d, d, &mut rng)),
        wq: ParamTensor::new("wq", xavier(d, d, &mut rng)),
        wk: ParamTensor::new("wk", xavier(d, d, &mut rng)),
        wv: ParamTensor::new("wv", xavier(d, d, &mut rng)),
        u_g: ParamTensor::new("u_g", xavier(hdim, d, &mut rng)),
        v_g: ParamTensor::new("v_g", xavier(hdim, d, &mut rng)),
        w_g: ParamTensor::new("w_g", Matrix::zeros(hdim, 1)),
        wc: ParamTensor::new("wc", xavier(c, d, &mut rng)),
    })
}

/// Landmark row indexes for the random strategy: a sorted distinct sample,
/// deterministic in the model seed and the bag size.
pub fn random_landmark_indices(seed: u64, n: usize, m: usize) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed ^ n as u64));
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// Everything a forward pass exposes: intermediate attention quantities for
/// inspection and heatmaps, plus the recording needed to run backward.
pub struct ForwardTrace {
    tape: Tape,
    logits_id: NodeId,
    param_nodes: Vec<(usize, NodeId)>,
    param_shapes: Vec<(usize, usize)>,
    /// Self-attended tile features.
    pub t: Matrix,
    /// Pre-softmax neighborhood attention scores, one per tile.
    pub masked_scores: Matrix,
    /// Neighborhood attention weights, summing to one.
    pub w: Matrix,
    /// Neighborhood-weighted value vectors.
    pub l: Matrix,
    /// Gated combination of the local and self-attended streams.
    pub fused: Matrix,
    /// Pooling attention weights, summing to one.
    pub a: Matrix,
    /// Slide embedding.
    pub z: Matrix,
    pub logits: Matrix,
    /// Set when the configured landmark count exceeded the bag size and was
    /// clamped down to it.
    pub landmark_clamped: bool,
}

fn check_unit_sum(v: &Matrix, what: &'static str) -> Result<()> {
    let s: f64 = v.data().iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(CamilError::Invariant(format!(
            "{what} weights sum to {s}, expected 1"
        )));
    }
    Ok(())
}

struct Ctx {
    tape: Tape,
    nodes: Vec<NodeId>,
}

fn leaves(params: &ModelParams) -> Ctx {
    let mut tape = Tape::new();
    let nodes = params
        .tensors()
        .iter()
        .map(|p| tape.leaf(p.value.clone()))
        .collect();
    Ctx { tape, nodes }
}

// Indexes into ModelParams::tensors() order.
const WQ1: usize = 0;
const WK1: usize = 1;
const WV1: usize = 2;
const WQ: usize = 3;
const WK: usize = 4;
const WV: usize = 5;
const UG: usize = 6;
const VG: usize = 7;
const WG: usize = 8;
const WC: usize = 9;

/// Landmark-approximated self-attention: project, compress queries and keys
/// to m landmarks, and bridge the three softmax kernels through the
/// pseudo-inverse of the middle one.
fn nystrom_stage(
    ctx: &mut Ctx,
    h: NodeId,
    params: &ModelParams,
    n: usize,
) -> Result<(NodeId, bool)> {
    let tape = &mut ctx.tape;
    let d = params.config.d;
    let nys = params.config.nystrom;
    let q1 = tape.matmul(h, ctx.nodes[WQ1])?;
    let k1 = tape.matmul(h, ctx.nodes[WK1])?;
    let v1 = tape.matmul(h, ctx.nodes[WV1])?;
    let clamped = nys.landmarks > n;
    let m = nys.landmarks.min(n);
    let (qt, kt) = match nys.strategy {
        LandmarkStrategy::Segment => (
            tape.segment_mean_rows(q1, m)?,
            tape.segment_mean_rows(k1, m)?,
        ),
        LandmarkStrategy::Random => {
            let idx = random_landmark_indices(params.seed, n, m);
            (
                tape.gather_rows(q1, idx.clone())?,
                tape.gather_rows(k1, idx)?,
            )
        }
    };
    let scale = 1.0 / (d as f64).sqrt();
    let s1 = tape.matmul_nt(q1, kt)?;
    let s1 = tape.scale(s1, scale);
    let s1 = tape.row_softmax(s1)?;
    let s2 = tape.matmul_nt(qt, kt)?;
    let s2 = tape.scale(s2, scale);
    let s2 = tape.row_softmax(s2)?;
    let s3 = tape.matmul_nt(qt, k1)?;
    let s3 = tape.scale(s3, scale);
    let s3 = tape.row_softmax(s3)?;
    let bridge = tape.pinv(s2, nys.pinv_iters)?;
    let s3v = tape.matmul(s3, v1)?;
    let mid = tape.matmul(bridge, s3v)?;
    let t = tape.matmul(s1, mid)?;
    Ok((t, clamped))
}

/// Neighborhood attention over the similarity mask: per-tile scores from
/// neighbor inner products, softmax across the whole bag (no scaling by
/// dimension), weights applied to the value stream.
fn neighbor_stage(
    ctx: &mut Ctx,
    t: NodeId,
    mask: &SimilarityMask,
) -> Result<(NodeId, NodeId, NodeId)> {
    let tape = &mut ctx.tape;
    let q = tape.matmul(t, ctx.nodes[WQ])?;
    let k = tape.matmul(t, ctx.nodes[WK])?;
    let v = tape.matmul(t, ctx.nodes[WV])?;
    let scores = tape.neighbor_score(q, k, mask.edges().to_vec())?;
    let w = tape.flat_softmax(scores)?;
    let l = tape.scale_rows(v, w)?;
    Ok((scores, w, l))
}

/// fused = σ(l)⊙l + (1−σ(l))⊙t, a per-entry gate choosing between the
/// neighborhood-weighted and self-attended streams.
fn fuse_stage(ctx: &mut Ctx, l: NodeId, t: NodeId, n: usize, d: usize) -> Result<NodeId> {
    let tape = &mut ctx.tape;
    let gate = tape.sigmoid(l)?;
    let ones = tape.constant(Matrix::from_vec(n, d, vec![1.0; n * d])?);
    let inverse = tape.sub(ones, gate)?;
    let local = tape.hadamard(gate, l)?;
    let global = tape.hadamard(inverse, t)?;
    tape.add(local, global)
}

/// Gated attention pooling: per-tile scores from a tanh/sigmoid gating of
/// the self-attended features, softmaxed into weights over the bag.
fn pool_stage(ctx: &mut Ctx, t: NodeId, fused: NodeId) -> Result<(NodeId, NodeId)> {
    let tape = &mut ctx.tape;
    let v_path = tape.matmul_nt(t, ctx.nodes[VG])?;
    let v_path = tape.tanh(v_path)?;
    let u_path = tape.matmul_nt(t, ctx.nodes[UG])?;
    let u_path = tape.sigmoid(u_path)?;
    let gated = tape.hadamard(v_path, u_path)?;
    let scores = tape.matmul(gated, ctx.nodes[WG])?;
    let a = tape.flat_softmax(scores)?;
    let z = tape.matmul_tn(a, fused)?;
    Ok((a, z))
}

pub fn forward(
    bag: &FeatureBag,
    mask: &SimilarityMask,
    params: &ModelParams,
) -> Result<ForwardTrace> {
    params.config.validate()?;
    let n = bag.features.rows();
    let d = params.config.d;
    if n == 0 {
        return Err(CamilError::InvalidArgument(
            "cannot run the model on an empty bag".into(),
        ));
    }
    if bag.features.cols() != d {
        return Err(CamilError::shape(
            "bag features",
            (n, bag.features.cols()),
            (n, d),
        ));
    }
    if mask.n() != n {
        return Err(CamilError::shape("similarity mask", (mask.n(), 1), (n, 1)));
    }

    let mut ctx = leaves(params);
    let h = ctx.tape.constant(bag.features.clone());

    let uniform = Matrix::from_vec(n, 1, vec![1.0 / n as f64; n])?;
    let zeros_col = Matrix::zeros(n, 1);

    let (t_id, masked_scores, w_id, l_id, fused_id, clamped) = match params.variant {
        Variant::Camil => {
            let (t, clamped) = nystrom_stage(&mut ctx, h, params, n)?;
            let (scores, w, l) = neighbor_stage(&mut ctx, t, mask)?;
            let fused = fuse_stage(&mut ctx, l, t, n, d)?;
            (t, Some(scores), Some(w), Some(l), fused, clamped)
        }
        Variant::CamilL => {
            let (scores, w, l) = neighbor_stage(&mut ctx, h, mask)?;
            let fused = fuse_stage(&mut ctx, l, h, n, d)?;
            (h, Some(scores), Some(w), Some(l), fused, false)
        }
        Variant::CamilG => {
            let (t, clamped) = nystrom_stage(&mut ctx, h, params, n)?;
            (t, None, None, None, t, clamped)
        }
        Variant::MeanPool | Variant::MaxPool => (h, None, None, None, h, false),
    };

    let (a_id, z_id) = match params.variant {
        Variant::Camil | Variant::CamilL | Variant::CamilG => {
            let (a, z) = pool_stage(&mut ctx, t_id, fused_id)?;
            (Some(a), z)
        }
        Variant::MeanPool => (None, ctx.tape.mean_rows(h)?),
        Variant::MaxPool => (None, ctx.tape.max_rows(h)?),
    };
    let logits_id = ctx.tape.matmul_nt(z_id, ctx.nodes[WC])?;

    let tape = ctx.tape;
    let extract = |id: Option<NodeId>, fill: &Matrix| -> Matrix {
        id.map(|i| tape.value(i).clone()).unwrap_or_else(|| fill.clone())
    };
    let w = extract(w_id, &uniform);
    let a = extract(a_id, &uniform);
    check_unit_sum(&w, "neighborhood attention")?;
    check_unit_sum(&a, "pooling attention")?;

    let trace = ForwardTrace {
        t: tape.value(t_id).clone(),
        masked_scores: extract(masked_scores, &zeros_col),
        w,
        l: extract(l_id, &Matrix::zeros(n, d)),
        fused: tape.value(fused_id).clone(),
        a,
        z: tape.value(z_id).clone(),
        logits: tape.value(logits_id).clone(),
        landmark_clamped: clamped,
        param_nodes: (0..10).map(|i| (i, i)).collect(),
        param_shapes: params.tensors().iter().map(|p| p.value.shape()).collect(),
        logits_id,
        tape,
    };
    Ok(trace)
}

impl ForwardTrace {
    /// Cross-entropy of the recorded logits against `label`.
    pub fn loss(&mut self, label: usize) -> Result<f64> {
        let id = self.tape.cross_entropy_logits(self.logits_id, label)?;
        Ok(self.tape.value(id).get(0, 0))
    }

    /// Per-tile scores in [0, 1]: the pooling attention, min-max normalized.
    /// A constant attention map yields 0.5 everywhere.
    pub fn attention_scores(&self) -> Vec<f64> {
        let data = self.a.data();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 1e-300 {
            return vec![0.5; data.len()];
        }
        data.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    }
}

/// Runs the loss backward and accumulates parameter gradients in place.
/// The trace must come from these same parameters.
pub fn backward(mut trace: ForwardTrace, params: &mut ModelParams, label: usize) -> Result<f64> {
    if label >= params.config.classes {
        return Err(CamilError::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            params.config.classes
        )));
    }
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|p| p.value.shape()).collect();
    if shapes != trace.param_shapes {
        return Err(CamilError::InvalidArgument(
            "trace does not match the parameter shapes it is applied to".into(),
        ));
    }
    let loss_id = trace.tape.cross_entropy_logits(trace.logits_id, label)?;
    let loss = trace.tape.value(loss_id).get(0, 0);
    trace.tape.backward(loss_id)?;
    let mut tensors = params.tensors_mut();
    for &(pi, node) in &trace.param_nodes {
        if let Some(g) = trace.tape.grad(node) {
            let dst = &mut tensors[pi].grad;
            for (d, &s) in dst.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }
    Ok(loss)
}

/// Forward plus loss without touching gradients, for validation scoring and
/// finite differences.
pub fn forward_loss(
    bag: &FeatureBag,
    mask: &SimilarityMask,
    params: &ModelParams,
    label: usize,
) -> Result<f64> {
    if label >= params.config.classes {
        return Err(CamilError::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            params.config.classes
        )));
    }
    forward(bag, mask, params)?.loss(label)
}

/// Exact (quadratic-cost) self-attention on the same projections, the
/// reference the landmark path approximates.
pub fn exact_attention(h: &Matrix, params: &ModelParams) -> Result<Matrix> {
    let q = h.matmul(&params.wq1.value)?;
    let k = h.matmul(&params.wk1.value)?;
    let v = h.matmul(&params.wv1.value)?;
    let scale = 1.0 / (params.config.d as f64).sqrt();
    let s = q.matmul_nt(&k)?.scale(scale).row_softmax()?;
    s.matmul(&v)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckGroup {
    pub name: &'static str,
    pub max_rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GradCheckGroup>,
    pub worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub variant: Variant,
    pub n: usize,
    pub d: usize,
    pub hdim: usize,
    pub classes: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Test hook: deliberately corrupt one analytic gradient entry so the
    /// check must fail.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> GradCheckConfig {
        GradCheckConfig {
            variant: Variant::Camil,
            n: 12,
            d: 8,
            hdim: 16,
            classes: 2,
            seed: 11,
            eps: 1e-5,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

/// Compares analytic gradients against central finite differences of the
/// loss on one random bag, reporting the worst relative error per tensor.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (bag, mask) = probe_bag(cfg.n, cfg.d, cfg.seed)?;
    let model_cfg = ModelConfig {
        d: cfg.d,
        hdim: cfg.hdim,
        classes: cfg.classes,
        nystrom: NystromConfig::default(),
    };
    let mut params = init_params(model_cfg, cfg.variant, cfg.seed)?;
    let label = 1usize;

    let trace = forward(&bag, &mask, &params)?;
    backward(trace, &mut params, label)?;
    let mut analytic: Vec<Matrix> = params.tensors().iter().map(|p| p.grad.clone()).collect();
    for p in params.tensors_mut() {
        p.zero_grad();
    }
    if cfg.corrupt {
        let g = &mut analytic[0];
        let v = g.get(0, 0);
        g.set(0, 0, v + 0.5);
    }

    let numeric = finite_diff_grad(
        &mut params,
        |p| forward_loss(&bag, &mask, p, label),
        cfg.eps,
    )?;

    let names: Vec<&'static str> = params.tensors().iter().map(|p| p.name).collect();
    let mut groups = Vec::with_capacity(names.len());
    let mut worst: f64 = 0.0;
    for ((name, a), n) in names.iter().zip(&analytic).zip(&numeric) {
        let mut max_rel: f64 = 0.0;
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            // The 1e-6 floor turns the comparison absolute for near-zero
            // entries, where central differences bottom out at the f64
            // cancellation noise of the loss (orders below 1e-10).
            let rel = (av - nv).abs() / av.abs().max(nv.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        worst = worst.max(max_rel);
        groups.push(GradCheckGroup { name, max_rel });
    }
    Ok(GradCheckReport {
        groups,
        worst,
        tolerance: cfg.tolerance,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ModelHeader {
    config: ModelConfig,
    variant: Variant,
    seed: u64,
    tensor_shapes: Vec<(usize, usize)>,
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let header = ModelHeader {
        config: params.config,
        variant: params.variant,
        seed: params.seed,
        tensor_shapes: params.tensors().iter().map(|p| p.value.shape()).collect(),
    };
    let payload: Vec<f64> = params
        .tensors()
        .iter()
        .flat_map(|p| p.value.data().iter().copied())
        .collect();
    crate::bagio::write_container(path, crate::bagio::MODEL_MAGIC, &header, &payload)
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let (header, payload): (ModelHeader, Vec<f64>) =
        crate::bagio::read_container(path, crate::bagio::MODEL_MAGIC)?;
    let mut params = init_params(header.config, header.variant, header.seed)?;
    {
        let mut tensors = params.tensors_mut();
        if header.tensor_shapes.len() != tensors.len() {
            return Err(CamilError::Parse {
                offset: 9,
                message: format!(
                    "checkpoint holds {} tensors, the model has {}",
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
