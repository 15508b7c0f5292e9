use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{axpy, dot, layer_norm, matmul, matmul_nt, matmul_tn};
use super::{ParamId, ParamStore, Tensor};
use crate::math::{exp, sigmoid, sqrt, tanh};
use crate::{crf, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// One attention block: queries `q_start..q_start+q_len` attend to keys
/// `k_start..k_start+k_len`. Under a causal mask, query `i` sees key `j` when
/// `j <= i + (k_len - q_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Gather(NodeId, Vec<usize>),
    SegmentMean(NodeId, Vec<(usize, usize)>),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    LogSumExp(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    MaskedFill(NodeId, Vec<bool>),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<f64>, scale: f64 },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, segments: Vec<AttnSegment>, causal: bool, probs: Vec<Vec<f64>> },
    CrfNll { emissions: NodeId, transitions: NodeId, labels: Vec<usize> },
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Forward-recording tape. Values are computed eagerly as ops are added.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err<T>(msg: alloc::string::String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::matrix(rows, cols, data).expect("internal shape")
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let value = if value.shape().len() == 2 { value } else { Self::mat(value.rows(), value.cols(), value.into_data()) };
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId> {
        Ok(self.constant(Tensor::matrix(rows, cols, data)?))
    }

    /// Trainable leaf backed by a parameter in `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = store.value(id);
        let value = Self::mat(t.rows(), t.cols(), t.data().to_vec());
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return shape_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Self::mat(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return shape_err(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ"));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Self::mat(m, n, out), Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return shape_err(format!("{what} {da:?} vs {db:?}"));
        }
        Ok(da)
    }

    fn zip_op(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Self::mat(r, c, out), op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + row` with `row` (1×n) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let ((r, c), (r2, c2)) = (self.dims(a), self.dims(row));
        if r2 != 1 || c2 != c {
            return shape_err(format!("add_row {r}x{c} + {r2}x{c2}"));
        }
        let b = self.value(row).data();
        let out = self.value(a).data().chunks(c).flat_map(|x| x.iter().zip(b).map(|(p, q)| p + q)).collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Self::mat(r, c, out), Op::AddRow(a, row), rg))
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| scale * x + shift).collect();
        let rg = self.rg(a);
        self.push(Self::mat(r, c, out), Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(Self::mat(r, c, out), op, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row lookup (embedding).
    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims(table);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return shape_err(format!("gather row {i} from {r} rows"));
            }
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(table);
        Ok(self.push(Self::mat(rows.len(), c, out), Op::Gather(table, rows.to_vec()), rg))
    }

    /// Mean of rows over each half-open span; one output row per span.
    pub fn segment_mean(&mut self, a: NodeId, spans: &[(usize, usize)]) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; spans.len() * c];
        for (s, &(lo, hi)) in spans.iter().enumerate() {
            if lo >= hi || hi > r {
                return shape_err(format!("segment ({lo},{hi}) over {r} rows"));
            }
            let w = 1.0 / (hi - lo) as f64;
            for row in lo..hi {
                axpy(&mut out[s * c..(s + 1) * c], w, &src[row * c..(row + 1) * c]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Self::mat(spans.len(), c, out), Op::SegmentMean(a, spans.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ((ra, ca), (rb, cb)) = (self.dims(a), self.dims(b));
        if ra != rb {
            return shape_err(format!("concat_cols {ra}x{ca} | {rb}x{cb}"));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Self::mat(ra, ca + cb, out), Op::ConcatCols(a, b), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return shape_err(format!("slice_cols {start}..{end} of {c}"));
        }
        let v = self.value(a).data();
        let out = (0..r).flat_map(|i| v[i * c + start..i * c + end].iter().copied()).collect();
        let rg = self.rg(a);
        Ok(self.push(Self::mat(r, end - start, out), Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = match parts.first() {
            Some(&p) => self.dims(p).1,
            None => return shape_err("concat_rows of nothing".into()),
        };
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            if self.dims(p).1 != c {
                return shape_err(format!("concat_rows width {} vs {c}", self.dims(p).1));
            }
            out.extend_from_slice(self.value(p).data());
            rg |= self.rg(p);
        }
        let r = out.len() / c;
        Ok(self.push(Self::mat(r, c, out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        out.chunks_mut(c).for_each(crate::math::softmax_in_place);
        let rg = self.rg(a);
        self.push(Self::mat(r, c, out), Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            let lse = crate::math::logsumexp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(a);
        self.push(Self::mat(r, c, out), Op::LogSoftmax(a), rg)
    }

    /// Row-wise max-shifted log-sum-exp; output is `rows × 1`.
    pub fn logsumexp(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().chunks(c).map(crate::math::logsumexp).collect();
        let rg = self.rg(a);
        self.push(Self::mat(r, 1, out), Op::LogSumExp(a), rg)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return shape_err(format!("layer_norm gain/bias must be 1x{c}"));
        }
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let inv_std = layer_norm(self.value(x).data(), self.value(gamma).data(), self.value(beta).data(), c, eps, &mut out, &mut xhat);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Self::mat(r, c, out), Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg))
    }

    /// Replaces entries where `mask` is true with `value` (typically `-inf`);
    /// masked entries receive no gradient.
    pub fn masked_fill(&mut self, a: NodeId, mask: &[bool], value: f64) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if mask.len() != r * c {
            return shape_err(format!("mask of {} for {r}x{c}", mask.len()));
        }
        let out = self.value(a).data().iter().zip(mask).map(|(&x, &m)| if m { value } else { x }).collect();
        let rg = self.rg(a);
        Ok(self.push(Self::mat(r, c, out), Op::MaskedFill(a, mask.to_vec()), rg))
    }

    /// Mean (over rows) negative log-likelihood of `targets` under row-wise
    /// softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let n = targets.len();
        self.cross_entropy_scaled(logits, targets, if n == 0 { 0.0 } else { 1.0 / n as f64 })
    }

    /// `scale * Σ_rows -log softmax(logits)[target]`.
    pub fn cross_entropy_scaled(&mut self, logits: NodeId, targets: &[usize], scale: f64) -> Result<NodeId> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return shape_err(format!("{} targets for {r} rows", targets.len()));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            if t >= c {
                return shape_err(format!("target {t} of {c} classes"));
            }
            let lse = crate::math::logsumexp(row);
            total += lse - row[t];
            row.iter_mut().for_each(|x| *x = exp(*x - lse));
        }
        let rg = self.rg(logits);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs, scale };
        Ok(self.push(Tensor::scalar(scale * total), op, rg))
    }

    /// Multi-head scaled dot-product attention over segment blocks. `q`, `k`
    /// and `v` are already projected; heads split the columns evenly.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, segments: &[AttnSegment], causal: bool) -> Result<NodeId> {
        let ((nq, d), (nk, dk), (nv, dv)) = (self.dims(q), self.dims(k), self.dims(v));
        if dk != d || dv != d || nk != nv || heads == 0 || d % heads != 0 {
            return shape_err(format!("attention q {nq}x{d} k {nk}x{dk} v {nv}x{dv} heads {heads}"));
        }
        for s in segments {
            if s.q_start + s.q_len > nq || s.k_start + s.k_len > nk || (causal && s.k_len < s.q_len) {
                return shape_err(format!("bad attention segment {s:?}"));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / sqrt(dh as f64);
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; nq * d];
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for s in segments {
            let offset = s.k_len - s.q_len.min(s.k_len);
            for h in 0..heads {
                let c0 = h * dh;
                let mut p = vec![0.0; s.q_len * s.k_len];
                for i in 0..s.q_len {
                    let qi = &qv[(s.q_start + i) * d + c0..(s.q_start + i) * d + c0 + dh];
                    let visible = if causal { (i + offset + 1).min(s.k_len) } else { s.k_len };
                    let row = &mut p[i * s.k_len..(i + 1) * s.k_len];
                    for (j, pj) in row.iter_mut().enumerate().take(visible) {
                        let kj = &kv[(s.k_start + j) * d + c0..(s.k_start + j) * d + c0 + dh];
                        *pj = dot(qi, kj) * scale;
                    }
                    for pj in row.iter_mut().skip(visible) {
                        *pj = f64::NEG_INFINITY;
                    }
                    crate::math::softmax_in_place(row);
                    let o = &mut out[(s.q_start + i) * d + c0..(s.q_start + i) * d + c0 + dh];
                    for (j, &pj) in row.iter().enumerate().take(visible) {
                        axpy(o, pj, &vv[(s.k_start + j) * d + c0..(s.k_start + j) * d + c0 + dh]);
                    }
                }
                probs.push(p);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let op = Op::Attention { q, k, v, heads, segments: segments.to_vec(), causal, probs };
        Ok(self.push(Self::mat(nq, d, out), op, rg))
    }

    /// Linear-chain CRF negative log-likelihood `ln Z - f(labels)` for a
    /// `K × L` emission matrix and an `L × L` transition matrix.
    pub fn crf_nll(&mut self, emissions: NodeId, transitions: NodeId, labels: &[usize]) -> Result<NodeId> {
        let ((k, l), (l1, l2)) = (self.dims(emissions), self.dims(transitions));
        if l1 != l || l2 != l || labels.len() != k {
            return shape_err(format!("crf emissions {k}x{l} transitions {l1}x{l2} labels {}", labels.len()));
        }
        let (em, tr) = (self.value(emissions), self.value(transitions));
        for (step, &label) in labels.iter().enumerate() {
            if label >= l || em.at(step, label) == f64::NEG_INFINITY {
                return Err(Error::MaskedLabel { step, label });
            }
        }
        let nll = crf::log_partition(em, tr) - crf::sequence_score(em, tr, labels);
        let rg = self.rg(emissions) || self.rg(transitions);
        let op = Op::CrfNll { emissions, transitions, labels: labels.to_vec() };
        Ok(self.push(Tensor::scalar(nll), op, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).data();
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Reverse pass from a scalar `loss`; parameter gradients are added to
    /// the store's accumulators.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
        if !self.rg(id) {
            return None;
        }
        let n = self.value(id).numel();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(pid) => {
                let pg = store.get_mut(*pid).gradient.data_mut();
                pg.iter_mut().zip(g).for_each(|(p, v)| *p += v);
            }
            &Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(a), self.dims(b));
                if let Some(ga) = self.acc(grads, a) {
                    matmul_nt(g, self.value(b).data(), m, n, k, ga);
                }
                if let Some(gb) = self.acc(grads, b) {
                    matmul_tn(self.value(a).data(), g, m, k, n, gb);
                }
            }
            &Op::MatMulNt(a, b) => {
                let ((m, k), (n, _)) = (self.dims(a), self.dims(b));
                if let Some(ga) = self.acc(grads, a) {
                    matmul(g, self.value(b).data(), m, n, k, ga);
                }
                if let Some(gb) = self.acc(grads, b) {
                    matmul_tn(g, self.value(a).data(), m, n, k, gb);
                }
            }
            &Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(gi) = self.acc(grads, id) {
                        axpy(gi, 1.0, g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.acc(grads, b) {
                    axpy(gb, -1.0, g);
                }
            }
            &Op::Mul(a, b) => {
                if let Some(ga) = self.acc(grads, a) {
                    let bv = self.value(b).data();
                    ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(x, (gi, bi))| *x += gi * bi);
                }
                if let Some(gb) = self.acc(grads, b) {
                    let av = self.value(a).data();
                    gb.iter_mut().zip(g.iter().zip(av)).for_each(|(x, (gi, ai))| *x += gi * ai);
                }
            }
            &Op::AddRow(a, row) => {
                if let Some(ga) = self.acc(grads, a) {
                    axpy(ga, 1.0, g);
                }
                let c = out.cols();
                if let Some(gr) = self.acc(grads, row) {
                    for chunk in g.chunks(c) {
                        axpy(gr, 1.0, chunk);
                    }
                }
            }
            &Op::Affine(a, s) => {
                if let Some(ga) = self.acc(grads, a) {
                    axpy(ga, s, g);
                }
            }
            &Op::Relu(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((x, gi), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        if *o > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            &Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((x, gi), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gi * (1.0 - o * o);
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((x, gi), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gi * o * (1.0 - o);
                    }
                }
            }
            Op::Gather(table, rows) => {
                let c = out.cols();
                if let Some(gt) = self.acc(grads, *table) {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(&mut gt[r * c..(r + 1) * c], 1.0, &g[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::SegmentMean(a, spans) => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (s, &(lo, hi)) in spans.iter().enumerate() {
                        let w = 1.0 / (hi - lo) as f64;
                        for row in lo..hi {
                            axpy(&mut ga[row * c..(row + 1) * c], w, &g[s * c..(s + 1) * c]);
                        }
                    }
                }
            }
            &Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.dims(a).1, self.dims(b).1);
                let c = ca + cb;
                if let Some(ga) = self.acc(grads, a) {
                    for (i, chunk) in g.chunks(c).enumerate() {
                        axpy(&mut ga[i * ca..(i + 1) * ca], 1.0, &chunk[..ca]);
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for (i, chunk) in g.chunks(c).enumerate() {
                        axpy(&mut gb[i * cb..(i + 1) * cb], 1.0, &chunk[ca..]);
                    }
                }
            }
            &Op::SliceCols(a, start) => {
                let (ca, w) = (self.dims(a).1, out.cols());
                if let Some(ga) = self.acc(grads, a) {
                    for (i, chunk) in g.chunks(w).enumerate() {
                        axpy(&mut ga[i * ca + start..i * ca + start + w], 1.0, chunk);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(gp) = self.acc(grads, p) {
                        axpy(gp, 1.0, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            &Op::Softmax(a) => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, a) {
                    for ((gar, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let d = dot(gr, yr);
                        for ((x, gi), yi) in gar.iter_mut().zip(gr).zip(yr) {
                            *x += yi * (gi - d);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, a) {
                    for ((gar, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let s: f64 = gr.iter().sum();
                        for ((x, gi), yi) in gar.iter_mut().zip(gr).zip(yr) {
                            *x += gi - exp(*yi) * s;
                        }
                    }
                }
            }
            &Op::LogSumExp(a) => {
                let c = self.dims(a).1;
                let av = self.value(a).data();
                if let Some(ga) = self.acc(grads, a) {
                    for (r, (gar, xr)) in ga.chunks_mut(c).zip(av.chunks(c)).enumerate() {
                        let lse = out.data()[r];
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        for (x, xi) in gar.iter_mut().zip(xr) {
                            *x += g[r] * exp(xi - lse);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let c = out.cols();
                let gam = self.value(*gamma).data();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, gi), hi) in gg.iter_mut().zip(gr).zip(hr) {
                            *o += gi * hi;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for gr in g.chunks(c) {
                        axpy(gb, 1.0, gr);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let n = c as f64;
                    for (r, ((gxr, gr), hr)) in gx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate() {
                        // dxhat = g * gamma
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for i in 0..c {
                            let d = gr[i] * gam[i];
                            sum_d += d;
                            sum_dh += d * hr[i];
                        }
                        let is = inv_std[r];
                        for i in 0..c {
                            let d = gr[i] * gam[i];
                            gxr[i] += is * (d - sum_d / n - hr[i] * sum_dh / n);
                        }
                    }
                }
            }
            Op::MaskedFill(a, mask) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), &m) in ga.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *x += gi;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, scale } => {
                let c = self.dims(*logits).1;
                if let Some(gl) = self.acc(grads, *logits) {
                    let s = g[0] * scale;
                    for (r, (glr, pr)) in gl.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        axpy(glr, s, pr);
                        glr[targets[r]] -= s;
                    }
                }
            }
            Op::Attention { q, k, v, heads, segments, causal, probs } => {
                self.attention_backward(g, *q, *k, *v, *heads, segments, *causal, probs, grads);
            }
            Op::CrfNll { emissions, transitions, labels } => {
                let (em, tr) = (self.value(*emissions), self.value(*transitions));
                let (unary, pairwise) = crf::marginals(em, tr);
                let (kk, l) = (em.rows(), em.cols());
                if let Some(ge) = self.acc(grads, *emissions) {
                    for i in 0..kk {
                        for y in 0..l {
                            ge[i * l + y] += g[0] * unary[i * l + y];
                        }
                        ge[i * l + labels[i]] -= g[0];
                    }
                }
                if let Some(gt) = self.acc(grads, *transitions) {
                    axpy(gt, g[0], &pairwise);
                    for w in labels.windows(2) {
                        gt[w[0] * l + w[1]] -= g[0];
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::Mean(a) => {
                let n = self.value(a).numel().max(1) as f64;
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: &[AttnSegment],
        causal: bool,
        probs: &[Vec<f64>],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let d = self.dims(q).1;
        let dh = d / heads;
        let scale = 1.0 / sqrt(dh as f64);
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut gq = vec![0.0; qv.len()];
        let mut gk = vec![0.0; kv.len()];
        let mut gv = vec![0.0; vv.len()];
        let mut pi = 0;
        for s in segments {
            let offset = s.k_len - s.q_len.min(s.k_len);
            for h in 0..heads {
                let c0 = h * dh;
                let p = &probs[pi];
                pi += 1;
                let mut dp = vec![0.0; s.k_len];
                for i in 0..s.q_len {
                    let visible = if causal { (i + offset + 1).min(s.k_len) } else { s.k_len };
                    let qrow = (s.q_start + i) * d + c0;
                    let go = &g[qrow..qrow + dh];
                    let prow = &p[i * s.k_len..(i + 1) * s.k_len];
                    let mut dsum = 0.0;
                    for j in 0..visible {
                        let vrow = (s.k_start + j) * d + c0;
                        dp[j] = dot(go, &vv[vrow..vrow + dh]);
                        dsum += dp[j] * prow[j];
                        axpy(&mut gv[vrow..vrow + dh], prow[j], go);
                    }
                    for j in 0..visible {
                        let ds = prow[j] * (dp[j] - dsum) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = (s.k_start + j) * d + c0;
                        axpy(&mut gq[qrow..qrow + dh], ds, &kv[krow..krow + dh]);
                        axpy(&mut gk[krow..krow + dh], ds, &qv[qrow..qrow + dh]);
                    }
                }
            }
        }
        for (id, gl) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(acc) = self.acc(grads, id) {
                axpy(acc, 1.0, &gl);
            }
        }
    }
}
