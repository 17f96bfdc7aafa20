//! Minimal reverse-mode differentiation over [`Matrix`] values.
//!
//! A `Tape` is an append-only arena of nodes; building an operation computes
//! its value eagerly and records what it needs for the backward sweep.
//! Gradients accumulate (a node used twice receives both contributions), and
//! subgraphs that cannot reach a gradient-requiring leaf are skipped.
//!
//! The pseudo-inverse is differentiated by replaying its Newton-Schulz
//! iteration through ordinary tape nodes rather than via the closed-form
//! pseudo-inverse derivative: on inputs where the iteration has not fully
//! converged the two differ, and the finite-difference contract is against
//! the function actually computed.

use crate::error::{CamilError, Result};
use crate::tensor::{dot, Matrix};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// A·Bᵀ
    MatMulNT(NodeId, NodeId),
    /// Aᵀ·B
    MatMulTN(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    RowSoftmax(NodeId),
    FlatSoftmax(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Row means over contiguous segments given as (start, len).
    SegmentMeanRows(NodeId, Vec<(usize, usize)>),
    GatherRows(NodeId, Vec<usize>),
    /// score_i = Σ_{j ~ i} ⟨q_i, k_j⟩ s_ij over an undirected edge list.
    NeighborScore {
        q: NodeId,
        k: NodeId,
        edges: Vec<(usize, usize, f64)>,
    },
    /// y_i = w_i · x_i with w an n×1 column.
    ScaleRows { x: NodeId, w: NodeId },
    MeanRows(NodeId),
    /// Column-wise max; attaining row per column recorded at forward time.
    MaxRows(NodeId, Vec<usize>),
    /// x + b broadcast over rows, b is 1×c.
    AddRowBroadcast { x: NodeId, b: NodeId },
    CrossEntropyLogits { logits: NodeId, label: usize },
    /// Rows scaled to unit L2 norm; the norms are recorded.
    RowL2Normalize(NodeId, Vec<f64>),
    /// Mean NT-Xent loss over ordered positive pairs (2k, 2k+1), applied to
    /// a 2B×2B cosine-similarity matrix.
    NtXent { sims: NodeId, tau: f64 },
    /// Max absolute column sum as 1×1, argmax column recorded.
    NormOneMax(NodeId, usize),
    /// Max absolute row sum as 1×1, argmax row recorded.
    NormInfMax(NodeId, usize),
    /// Elementwise reciprocal of a 1×1.
    Recip(NodeId),
    /// x scaled by a 1×1 node.
    MulScalar { x: NodeId, s: NodeId },
    SumAll(NodeId),
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
    needs: Vec<bool>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            needs: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Matrix, needs: bool) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.needs.push(needs);
        self.grads.push(None);
        self.values.len() - 1
    }

    fn needs2(&self, a: NodeId, b: NodeId) -> bool {
        self.needs[a] || self.needs[b]
    }

    /// A differentiable leaf (parameter or any input a gradient is wanted for).
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input; backward never allocates a gradient for it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.values[id]
    }

    /// Gradient accumulated for `id` by the last `backward` call.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id].as_ref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a].matmul(&self.values[b])?;
        Ok(self.push(Op::MatMul(a, b), v, self.needs2(a, b)))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a].matmul_nt(&self.values[b])?;
        Ok(self.push(Op::MatMulNT(a, b), v, self.needs2(a, b)))
    }

    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a].matmul_tn(&self.values[b])?;
        Ok(self.push(Op::MatMulTN(a, b), v, self.needs2(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a].add(&self.values[b])?;
        Ok(self.push(Op::Add(a, b), v, self.needs2(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a].sub(&self.values[b])?;
        Ok(self.push(Op::Sub(a, b), v, self.needs2(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a].hadamard(&self.values[b])?;
        Ok(self.push(Op::Hadamard(a, b), v, self.needs2(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.values[a].scale(k);
        self.push(Op::Scale(a, k), v, self.needs[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a].transpose();
        self.push(Op::Transpose(a), v, self.needs[a])
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.values[a].row_softmax()?;
        Ok(self.push(Op::RowSoftmax(a), v, self.needs[a]))
    }

    pub fn flat_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.values[a].softmax_flat()?;
        Ok(self.push(Op::FlatSoftmax(a), v, self.needs[a]))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.values[a].map(|x| 1.0 / (1.0 + (-x).exp()))?;
        Ok(self.push(Op::Sigmoid(a), v, self.needs[a]))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.values[a].map(f64::tanh)?;
        Ok(self.push(Op::Tanh(a), v, self.needs[a]))
    }

    /// Means over `m` contiguous, balanced row segments: boundaries at
    /// ⌊s·n/m⌋, so sizes differ by at most one and none is empty.
    /// Requires 1 ≤ m ≤ n.
    pub fn segment_mean_rows(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        let x = &self.values[a];
        let n = x.rows();
        if m == 0 || m > n {
            return Err(CamilError::InvalidArgument(format!(
                "segment count {m} out of range for {n} rows"
            )));
        }
        let mut segments = Vec::with_capacity(m);
        let mut out = Matrix::zeros(m, x.cols());
        for s in 0..m {
            let start = s * n / m;
            let len = (s + 1) * n / m - start;
            segments.push((start, len));
            for i in start..start + len {
                for (o, &v) in out.row_mut(s).iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            let inv = 1.0 / len as f64;
            for o in out.row_mut(s) {
                *o *= inv;
            }
        }
        Ok(self.push(Op::SegmentMeanRows(a, segments), out, self.needs[a]))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let x = &self.values[a];
        let mut out = Matrix::zeros(idx.len(), x.cols());
        for (r, &i) in idx.iter().enumerate() {
            if i >= x.rows() {
                return Err(CamilError::InvalidArgument(format!(
                    "gather index {i} out of range for {} rows",
                    x.rows()
                )));
            }
            out.row_mut(r).copy_from_slice(x.row(i));
        }
        Ok(self.push(Op::GatherRows(a, idx), out, self.needs[a]))
    }

    /// Neighborhood-restricted attention scores. `edges` holds each
    /// undirected pair once as (i, j, s_ij); both directions contribute.
    pub fn neighbor_score(
        &mut self,
        q: NodeId,
        k: NodeId,
        edges: Vec<(usize, usize, f64)>,
    ) -> Result<NodeId> {
        let (qv, kv) = (&self.values[q], &self.values[k]);
        if qv.shape() != kv.shape() {
            return Err(CamilError::shape("neighbor_score", qv.shape(), kv.shape()));
        }
        let n = qv.rows();
        let mut out = Matrix::zeros(n, 1);
        for &(i, j, s) in &edges {
            if i >= n || j >= n {
                return Err(CamilError::InvalidArgument(format!(
                    "edge ({i},{j}) out of range for {n} tiles"
                )));
            }
            out.set(i, 0, out.get(i, 0) + dot(qv.row(i), kv.row(j)) * s);
            out.set(j, 0, out.get(j, 0) + dot(qv.row(j), kv.row(i)) * s);
        }
        let needs = self.needs2(q, k);
        Ok(self.push(Op::NeighborScore { q, k, edges }, out, needs))
    }

    /// Rows of `x` scaled by the n×1 column `w`.
    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (&self.values[x], &self.values[w]);
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(CamilError::shape("scale_rows", xv.shape(), wv.shape()));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let wi = wv.get(i, 0);
            for v in out.row_mut(i) {
                *v *= wi;
            }
        }
        let needs = self.needs2(x, w);
        Ok(self.push(Op::ScaleRows { x, w }, out, needs))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.values[a];
        if x.rows() == 0 {
            return Err(CamilError::InvalidArgument("mean of zero rows".into()));
        }
        let v = x.col_means();
        Ok(self.push(Op::MeanRows(a), v, self.needs[a]))
    }

    pub fn max_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.values[a];
        if x.rows() == 0 {
            return Err(CamilError::InvalidArgument("max of zero rows".into()));
        }
        let (v, arg) = x.col_max_argmax();
        Ok(self.push(Op::MaxRows(a, arg), v, self.needs[a]))
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (&self.values[x], &self.values[b]);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(CamilError::shape("add_row_broadcast", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &add) in out.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += add;
            }
        }
        let needs = self.needs2(x, b);
        Ok(self.push(Op::AddRowBroadcast { x, b }, out, needs))
    }

    /// −log softmax(logits)[label] for a 1×c logits row, computed via the
    /// max-shifted log-sum-exp so large logits cannot overflow.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = &self.values[logits];
        if lv.rows() != 1 || label >= lv.cols() {
            return Err(CamilError::InvalidArgument(format!(
                "cross entropy needs a 1xC logits row with label < C, got {:?} label {label}",
                lv.shape()
            )));
        }
        let row = lv.row(0);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - row[label];
        let v = Matrix::from_vec(1, 1, vec![loss])?;
        Ok(self.push(Op::CrossEntropyLogits { logits, label }, v, self.needs[logits]))
    }

    pub fn row_l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.values[a];
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = dot(x.row(i), x.row(i)).sqrt();
            if n == 0.0 {
                return Err(CamilError::InvalidArgument(
                    "zero row cannot be L2-normalized".into(),
                ));
            }
            norms.push(n);
            for v in out.row_mut(i) {
                *v /= n;
            }
        }
        Ok(self.push(Op::RowL2Normalize(a, norms), out, self.needs[a]))
    }

    /// Mean contrastive loss over the 2B ordered positive pairs of a 2B×2B
    /// similarity matrix (views 2k and 2k+1 are positives). Every k ≠ i term
    /// enters the denominator; the diagonal never does.
    pub fn nt_xent(&mut self, sims: NodeId, tau: f64) -> Result<NodeId> {
        let s = &self.values[sims];
        let n = s.rows();
        if tau <= 0.0 {
            return Err(CamilError::InvalidArgument(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        if n != s.cols() || n < 2 || n % 2 != 0 {
            return Err(CamilError::InvalidArgument(format!(
                "similarity matrix must be 2Bx2B with B >= 1, got {:?}",
                s.shape()
            )));
        }
        let mut total = 0.0;
        for i in 0..n {
            let p = i ^ 1;
            let row = s.row(i);
            let mut max = f64::NEG_INFINITY;
            for (k, &v) in row.iter().enumerate() {
                if k != i {
                    max = max.max(v / tau);
                }
            }
            let mut sum = 0.0;
            for (k, &v) in row.iter().enumerate() {
                if k != i {
                    sum += (v / tau - max).exp();
                }
            }
            total += max + sum.ln() - row[p] / tau;
        }
        let v = Matrix::from_vec(1, 1, vec![total / n as f64])?;
        Ok(self.push(Op::NtXent { sims, tau }, v, self.needs[sims]))
    }

    pub fn norm_one_max(&mut self, a: NodeId) -> NodeId {
        let (v, jmax) = self.values[a].norm_one_argmax();
        let m = Matrix::from_vec(1, 1, vec![v]).expect("finite norm");
        self.push(Op::NormOneMax(a, jmax), m, self.needs[a])
    }

    pub fn norm_inf_max(&mut self, a: NodeId) -> NodeId {
        let (v, imax) = self.values[a].norm_inf_argmax();
        let m = Matrix::from_vec(1, 1, vec![v]).expect("finite norm");
        self.push(Op::NormInfMax(a, imax), m, self.needs[a])
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.values[a];
        if x.shape() != (1, 1) {
            return Err(CamilError::shape("recip", x.shape(), (1, 1)));
        }
        let v = x.map(|v| 1.0 / v)?;
        Ok(self.push(Op::Recip(a), v, self.needs[a]))
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.values[s].shape() != (1, 1) {
            return Err(CamilError::shape("mul_scalar", self.values[s].shape(), (1, 1)));
        }
        let k = self.values[s].get(0, 0);
        let v = self.values[x].scale(k);
        let needs = self.needs2(x, s);
        Ok(self.push(Op::MulScalar { x, s }, v, needs))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.values[a].data().iter().sum();
        let v = Matrix::from_vec(1, 1, vec![s])?;
        Ok(self.push(Op::SumAll(a), v, self.needs[a]))
    }

    /// Pseudo-inverse by `iters` Newton-Schulz steps, recorded step by step
    /// so the backward sweep differentiates exactly the computation run.
    /// Precondition: the input is not the zero matrix (its norm scaling
    /// would divide by zero); the attention kernels this is used on are
    /// softmax outputs and always satisfy it.
    pub fn pinv(&mut self, a: NodeId, iters: usize) -> Result<NodeId> {
        let n1 = self.norm_one_max(a);
        let ninf = self.norm_inf_max(a);
        let prod = self.hadamard(n1, ninf)?;
        let c = self.recip(prod)?;
        let at = self.transpose(a);
        let mut z = self.mul_scalar(at, c)?;
        for _ in 0..iters {
            let az = self.matmul(a, z)?;
            let zaz = self.matmul(z, az)?;
            let z2 = self.scale(z, 2.0);
            z = self.sub(z2, zaz)?;
        }
        Ok(z)
    }

    fn accumulate(&mut self, id: NodeId, g: Matrix) -> Result<()> {
        if !self.needs[id] {
            return Ok(());
        }
        match self.grads[id].take() {
            Some(prev) => self.grads[id] = Some(prev.add(&g)?),
            None => self.grads[id] = Some(g),
        }
        Ok(())
    }

    /// Reverse sweep from a 1×1 loss node. Gradients land on every node that
    /// can reach a differentiable leaf; read them with [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.values[loss].shape() != (1, 1) {
            return Err(CamilError::InvalidArgument(
                "backward starts from a scalar node".into(),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss] = Some(Matrix::from_vec(1, 1, vec![1.0])?);
        for id in (0..=loss).rev() {
            let Some(g) = self.grads[id].clone() else {
                continue;
            };
            match self.ops[id].clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs[a] {
                        let ga = g.matmul_nt(&self.values[b])?;
                        self.accumulate(a, ga)?;
                    }
                    if self.needs[b] {
                        let gb = self.values[a].matmul_tn(&g)?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.needs[a] {
                        let ga = g.matmul(&self.values[b])?;
                        self.accumulate(a, ga)?;
                    }
                    if self.needs[b] {
                        let gb = g.matmul_tn(&self.values[a])?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::MatMulTN(a, b) => {
                    if self.needs[a] {
                        let ga = self.values[b].matmul_nt(&g)?;
                        self.accumulate(a, ga)?;
                    }
                    if self.needs[b] {
                        let gb = self.values[a].matmul(&g)?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone())?;
                    self.accumulate(b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone())?;
                    self.accumulate(b, g.scale(-1.0))?;
                }
                Op::Hadamard(a, b) => {
                    if self.needs[a] {
                        let ga = g.hadamard(&self.values[b])?;
                        self.accumulate(a, ga)?;
                    }
                    if self.needs[b] {
                        let gb = g.hadamard(&self.values[a])?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::Scale(a, k) => self.accumulate(a, g.scale(k))?,
                Op::Transpose(a) => self.accumulate(a, g.transpose())?,
                Op::RowSoftmax(a) => {
                    let y = &self.values[id];
                    let mut ga = g.clone();
                    for i in 0..y.rows() {
                        let gy = dot(ga.row(i), y.row(i));
                        let yrow = y.row(i);
                        for (gv, &yv) in ga.row_mut(i).iter_mut().zip(yrow) {
                            *gv = (*gv - gy) * yv;
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::FlatSoftmax(a) => {
                    let y = &self.values[id];
                    let gy = dot(g.data(), y.data());
                    let mut ga = g.clone();
                    for (gv, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *gv = (*gv - gy) * yv;
                    }
                    self.accumulate(a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[id];
                    let ga = g.hadamard(&y.map(|v| v * (1.0 - v))?)?;
                    self.accumulate(a, ga)?;
                }
                Op::Tanh(a) => {
                    let y = &self.values[id];
                    let ga = g.hadamard(&y.map(|v| 1.0 - v * v)?)?;
                    self.accumulate(a, ga)?;
                }
                Op::SegmentMeanRows(a, segments) => {
                    let mut ga = Matrix::zeros(self.values[a].rows(), self.values[a].cols());
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        let inv = 1.0 / len as f64;
                        for i in start..start + len {
                            for (o, &gv) in ga.row_mut(i).iter_mut().zip(g.row(s)) {
                                *o += gv * inv;
                            }
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Matrix::zeros(self.values[a].rows(), self.values[a].cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &gv) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::NeighborScore { q, k, edges } => {
                    let (qv, kv) = (&self.values[q], &self.values[k]);
                    let mut gq = Matrix::zeros(qv.rows(), qv.cols());
                    let mut gk = Matrix::zeros(kv.rows(), kv.cols());
                    for &(i, j, s) in &edges {
                        let gi = g.get(i, 0) * s;
                        let gj = g.get(j, 0) * s;
                        for c in 0..qv.cols() {
                            // d score_i = ⟨q_i, k_j⟩ s and d score_j = ⟨q_j, k_i⟩ s
                            gq.set(i, c, gq.get(i, c) + gi * kv.get(j, c));
                            gk.set(j, c, gk.get(j, c) + gi * qv.get(i, c));
                            gq.set(j, c, gq.get(j, c) + gj * kv.get(i, c));
                            gk.set(i, c, gk.get(i, c) + gj * qv.get(j, c));
                        }
                    }
                    self.accumulate(q, gq)?;
                    self.accumulate(k, gk)?;
                }
                Op::ScaleRows { x, w } => {
                    let gx = if self.needs[x] {
                        let wv = &self.values[w];
                        let mut gx = g.clone();
                        for i in 0..gx.rows() {
                            let wi = wv.get(i, 0);
                            for v in gx.row_mut(i) {
                                *v *= wi;
                            }
                        }
                        Some(gx)
                    } else {
                        None
                    };
                    let gw = if self.needs[w] {
                        let xv = &self.values[x];
                        let mut gw = Matrix::zeros(xv.rows(), 1);
                        for i in 0..gw.rows() {
                            gw.set(i, 0, dot(g.row(i), xv.row(i)));
                        }
                        Some(gw)
                    } else {
                        None
                    };
                    if let Some(gx) = gx {
                        self.accumulate(x, gx)?;
                    }
                    if let Some(gw) = gw {
                        self.accumulate(w, gw)?;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.values[a].rows();
                    let mut ga = Matrix::zeros(n, self.values[a].cols());
                    let inv = 1.0 / n as f64;
                    for i in 0..n {
                        for (o, &gv) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                            *o = gv * inv;
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::MaxRows(a, arg) => {
                    let mut ga = Matrix::zeros(self.values[a].rows(), self.values[a].cols());
                    for (j, &i) in arg.iter().enumerate() {
                        ga.set(i, j, g.get(0, j));
                    }
                    self.accumulate(a, ga)?;
                }
                Op::AddRowBroadcast { x, b } => {
                    self.accumulate(x, g.clone())?;
                    if self.needs[b] {
                        let mut gb = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, &gv) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                                *o += gv;
                            }
                        }
                        self.accumulate(b, gb)?;
                    }
                }
                Op::CrossEntropyLogits { logits, label } => {
                    let p = self.values[logits].row_softmax()?;
                    let g0 = g.get(0, 0);
                    let mut gl = p.scale(g0);
                    gl.set(0, label, gl.get(0, label) - g0);
                    self.accumulate(logits, gl)?;
                }
                Op::RowL2Normalize(a, norms) => {
                    let y = &self.values[id];
                    let mut ga = g.clone();
                    for i in 0..y.rows() {
                        let gy = dot(ga.row(i), y.row(i));
                        let inv = 1.0 / norms[i];
                        let yrow = y.row(i);
                        for (gv, &yv) in ga.row_mut(i).iter_mut().zip(yrow) {
                            *gv = (*gv - gy * yv) * inv;
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::NtXent { sims, tau } => {
                    let s = &self.values[sims];
                    let n = s.rows();
                    let g0 = g.get(0, 0) / (n as f64 * tau);
                    let mut gs = Matrix::zeros(n, n);
                    for i in 0..n {
                        let p = i ^ 1;
                        let row = s.row(i);
                        let mut max = f64::NEG_INFINITY;
                        for (k, &v) in row.iter().enumerate() {
                            if k != i {
                                max = max.max(v / tau);
                            }
                        }
                        let mut sum = 0.0;
                        for (k, &v) in row.iter().enumerate() {
                            if k != i {
                                sum += (v / tau - max).exp();
                            }
                        }
                        for (k, &v) in row.iter().enumerate() {
                            if k != i {
                                let soft = (v / tau - max).exp() / sum;
                                let ind = if k == p { 1.0 } else { 0.0 };
                                gs.set(i, k, g0 * (soft - ind));
                            }
                        }
                    }
                    self.accumulate(sims, gs)?;
                }
                Op::NormOneMax(a, jmax) => {
                    let x = &self.values[a];
                    let g0 = g.get(0, 0);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        ga.set(i, jmax, g0 * x.get(i, jmax).signum());
                    }
                    self.accumulate(a, ga)?;
                }
                Op::NormInfMax(a, imax) => {
                    let x = &self.values[a];
                    let g0 = g.get(0, 0);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for j in 0..x.cols() {
                        ga.set(imax, j, g0 * x.get(imax, j).signum());
                    }
                    self.accumulate(a, ga)?;
                }
                Op::Recip(a) => {
                    let y = self.values[id].get(0, 0);
                    let ga = g.scale(-y * y);
                    self.accumulate(a, ga)?;
                }
                Op::MulScalar { x, s } => {
                    let k = self.values[s].get(0, 0);
                    if self.needs[x] {
                        self.accumulate(x, g.scale(k))?;
                    }
                    if self.needs[s] {
                        let gs = dot(g.data(), self.values[x].data());
                        self.accumulate(s, Matrix::from_vec(1, 1, vec![gs])?)?;
                    }
                }
                Op::SumAll(a) => {
                    let g0 = g.get(0, 0);
                    let (r, c) = self.values[a].shape();
                    let ga = Matrix::from_vec(r, c, vec![g0; r * c])?;
                    self.accumulate(a, ga)?;
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
