//! Tape-based reverse-mode differentiation over coarse tensor ops.
//!
//! Every op records its inputs (and whatever it cached during the forward
//! pass) on the tape. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into every node that depends on a trainable leaf.
//! Activations are laid out as `[rows, width]` matrices; sequence ops take
//! the batch size and token count explicitly.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Gelu(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<S>, rstd: Vec<S> },
    Attention { q: NodeId, k: NodeId, v: NodeId, batch: usize, tokens: usize, heads: usize, probs: Vec<S> },
    Reshape(NodeId),
    Unfold3 { x: NodeId, batch: usize, len: usize },
    ConcatSeq { parts: Vec<(NodeId, usize)>, batch: usize },
    BroadcastBatch { x: NodeId, batch: usize },
    ScalarEmbed { x: NodeId, w: NodeId, b: NodeId },
    TokenReadout { h: NodeId, w: NodeId, b: NodeId, tokens: usize, offset: usize },
    MeanPool { h: NodeId, batch: usize },
    Mse(NodeId, NodeId),
    SumAll(NodeId),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// A single forward pass and its tape.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, NodeId>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    gelu_parts(x).0
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Input that receives a gradient (used by gradient checks).
    pub fn input_with_grad(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable leaf. Repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).as_matrix();
        let bs = self.value(b).shape();
        if bs.len() != 2 || bs[0] != k {
            return Err(NnError::Shape(format!(
                "matmul [{m}, {k}] x {bs:?}"
            )));
        }
        let n = bs[1];
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            S::one(),
            self.value(a).data(),
            MatView::row_major(k),
            self.value(b).data(),
            MatView::row_major(n),
            S::zero(),
            out.data_mut(),
            MatView::row_major(n),
        );
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, cols) = self.value(x).as_matrix();
        if self.value(b).len() != cols {
            return Err(NnError::Shape(format!(
                "bias of length {} added to width {cols}",
                self.value(b).len()
            )));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &bb) in row.iter_mut().zip(&bias) {
                *o = *o + bb;
            }
        }
        let ng = self.needs(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).len() != self.value(b).len() {
            return Err(NnError::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).len() != self.value(b).len() {
            return Err(NnError::Shape("mul length mismatch".into()));
        }
        let mut out = self.value(a).clone();
        for (o, &bb) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = *o * bb;
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let s = S::from_f64_lossy(s);
        let mut out = self.value(a).clone();
        out.scale_in_place(s);
        let ng = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = S::from_f64_lossy(gelu_parts(v.as_f64()).0);
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).as_matrix();
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(NnError::Shape("layer norm affine width".into()));
        }
        let eps = S::from_f64_lossy(LAYER_NORM_EPS);
        let inv_n = S::one() / S::from_usize(cols).unwrap();
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        {
            let xv = self.value(x).data();
            let g = self.value(gamma).data();
            let b = self.value(beta).data();
            let od = out.data_mut();
            for r in 0..rows {
                let row = &xv[r * cols..(r + 1) * cols];
                let mean = row.iter().copied().sum::<S>() * inv_n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_n;
                let rstd = S::one() / (var + eps).sqrt();
                for c in 0..cols {
                    od[r * cols + c] = (row[c] - mean) * rstd * g[c] + b[c];
                }
                means.push(mean);
                rstds.push(rstd);
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, mean: means, rstd: rstds }, ng))
    }

    /// Scaled dot-product attention over `heads` column groups of
    /// `[batch * tokens, width]` query/key/value matrices.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        tokens: usize,
        heads: usize,
    ) -> Result<NodeId> {
        let (rows, width) = self.value(q).as_matrix();
        for id in [k, v] {
            if self.value(id).as_matrix() != (rows, width) {
                return Err(NnError::Shape("attention q/k/v shapes differ".into()));
            }
        }
        if rows != batch * tokens {
            return Err(NnError::Shape(format!(
                "attention rows {rows} != batch {batch} * tokens {tokens}"
            )));
        }
        if heads == 0 || width % heads != 0 {
            return Err(NnError::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        let dk = width / heads;
        let scale = S::one() / S::from_usize(dk).unwrap().sqrt();
        let mut out = Tensor::zeros(&[rows, width]);
        let mut probs = vec![S::zero(); batch * heads * tokens * tokens];
        {
            let qd = self.value(q).data();
            let kd = self.value(k).data();
            let vd = self.value(v).data();
            let od = out.data_mut();
            for b in 0..batch {
                for h in 0..heads {
                    let off = b * tokens * width + h * dk;
                    let p_off = (b * heads + h) * tokens * tokens;
                    let p = &mut probs[p_off..p_off + tokens * tokens];
                    gemm(
                        tokens,
                        dk,
                        tokens,
                        scale,
                        qd,
                        MatView::row_major(width).at(off),
                        kd,
                        MatView::transposed(width).at(off),
                        S::zero(),
                        p,
                        MatView::row_major(tokens),
                    );
                    softmax_rows(p, tokens);
                    gemm(
                        tokens,
                        tokens,
                        dk,
                        S::one(),
                        p,
                        MatView::row_major(tokens),
                        vd,
                        MatView::row_major(width).at(off),
                        S::zero(),
                        od,
                        MatView::row_major(width).at(off),
                    );
                }
            }
        }
        let ng = self.needs(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, batch, tokens, heads, probs }, ng))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Zero-padded width-3 patches of a `[batch * len, channels]` sequence:
    /// row `(b, l)` of the output holds positions `l-1, l, l+1`.
    pub fn unfold3(&mut self, x: NodeId, batch: usize, len: usize) -> Result<NodeId> {
        let (rows, ch) = self.value(x).as_matrix();
        if rows != batch * len {
            return Err(NnError::Shape(format!("unfold3 rows {rows} != {batch} * {len}")));
        }
        let mut out = Tensor::zeros(&[rows, 3 * ch]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for b in 0..batch {
                for l in 0..len {
                    let orow = (b * len + l) * 3 * ch;
                    for j in 0..3 {
                        let src = l as isize + j as isize - 1;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let irow = (b * len + src as usize) * ch;
                        od[orow + j * ch..orow + (j + 1) * ch]
                            .copy_from_slice(&xd[irow..irow + ch]);
                    }
                }
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Unfold3 { x, batch, len }, ng))
    }

    /// Interleaves per-sequence token blocks: each part is
    /// `[batch * n_i, width]` and the result is `[batch * sum(n_i), width]`.
    pub fn concat_seq(&mut self, parts: &[(NodeId, usize)], batch: usize) -> Result<NodeId> {
        let width = match parts.first() {
            Some(&(id, _)) => self.value(id).as_matrix().1,
            None => return Err(NnError::Shape("concat of zero parts".into())),
        };
        for &(id, n) in parts {
            if self.value(id).as_matrix() != (batch * n, width) {
                return Err(NnError::Shape(format!(
                    "concat part {:?} is not [{batch} * {n}, {width}]",
                    self.value(id).shape()
                )));
            }
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Tensor::zeros(&[batch * total, width]);
        {
            let od = out.data_mut();
            for b in 0..batch {
                let mut row = b * total;
                for &(id, n) in parts {
                    let src = &self.value(id).data()[b * n * width..(b + 1) * n * width];
                    od[row * width..(row + n) * width].copy_from_slice(src);
                    row += n;
                }
            }
        }
        let ng = parts.iter().any(|p| self.nodes[p.0 .0].needs_grad);
        Ok(self.push(out, Op::ConcatSeq { parts: parts.to_vec(), batch }, ng))
    }

    /// Repeats an `[n, width]` block `batch` times.
    pub fn broadcast_batch(&mut self, x: NodeId, batch: usize) -> NodeId {
        let (n, width) = self.value(x).as_matrix();
        let src = self.value(x).data().to_vec();
        let mut data = Vec::with_capacity(batch * src.len());
        for _ in 0..batch {
            data.extend_from_slice(&src);
        }
        let out = Tensor::new(&[batch * n, width], data).expect("consistent");
        let ng = self.needs(&[x]);
        self.push(out, Op::BroadcastBatch { x, batch }, ng)
    }

    /// Per-column scalar tokenizer: `x [B, P]`, `w, b [P, D]` -> `[B * P, D]`.
    pub fn scalar_embed(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, p) = self.value(x).as_matrix();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 || ws[0] != p || self.value(b).shape() != ws.as_slice() {
            return Err(NnError::Shape(format!("scalar_embed x [{batch}, {p}] with w {ws:?}")));
        }
        let d = ws[1];
        let mut out = Tensor::zeros(&[batch * p, d]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            let od = out.data_mut();
            for bi in 0..batch {
                for pi in 0..p {
                    let xv = xd[bi * p + pi];
                    let o = (bi * p + pi) * d;
                    for c in 0..d {
                        od[o + c] = xv * wd[pi * d + c] + bd[pi * d + c];
                    }
                }
            }
        }
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::ScalarEmbed { x, w, b }, ng))
    }

    /// Per-token linear readout of `P` consecutive tokens starting at
    /// `offset` in every sequence: `h [B * tokens, D]` -> `[B, P]`.
    pub fn token_readout(
        &mut self,
        h: NodeId,
        w: NodeId,
        b: NodeId,
        tokens: usize,
        offset: usize,
    ) -> Result<NodeId> {
        let (rows, d) = self.value(h).as_matrix();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 || ws[1] != d || self.value(b).len() != ws[0] {
            return Err(NnError::Shape(format!("token_readout w {ws:?} for width {d}")));
        }
        let p = ws[0];
        if tokens == 0 || rows % tokens != 0 || offset + p > tokens {
            return Err(NnError::Shape("token_readout token range".into()));
        }
        let batch = rows / tokens;
        let mut out = Tensor::zeros(&[batch, p]);
        {
            let hd = self.value(h).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            let od = out.data_mut();
            for bi in 0..batch {
                for pi in 0..p {
                    let row = (bi * tokens + offset + pi) * d;
                    let dot: S = (0..d).map(|c| hd[row + c] * wd[pi * d + c]).sum();
                    od[bi * p + pi] = dot + bd[pi];
                }
            }
        }
        let ng = self.needs(&[h, w, b]);
        Ok(self.push(out, Op::TokenReadout { h, w, b, tokens, offset }, ng))
    }

    /// Mean over the tokens of each sequence: `[B * N, D]` -> `[B, D]`.
    pub fn mean_pool(&mut self, h: NodeId, batch: usize) -> Result<NodeId> {
        let (rows, d) = self.value(h).as_matrix();
        if batch == 0 || rows % batch != 0 {
            return Err(NnError::Shape("mean_pool batch".into()));
        }
        let n = rows / batch;
        let inv = S::one() / S::from_usize(n).unwrap();
        let mut out = Tensor::zeros(&[batch, d]);
        {
            let hd = self.value(h).data();
            let od = out.data_mut();
            for b in 0..batch {
                for t in 0..n {
                    let row = (b * n + t) * d;
                    for c in 0..d {
                        od[b * d + c] = od[b * d + c] + hd[row + c];
                    }
                }
                for c in 0..d {
                    od[b * d + c] = od[b * d + c] * inv;
                }
            }
        }
        let ng = self.needs(&[h]);
        Ok(self.push(out, Op::MeanPool { h, batch }, ng))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() || p.is_empty() {
            return Err(NnError::Shape("mse operand lengths".into()));
        }
        let n = S::from_usize(p.len()).unwrap();
        let s: S = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let ng = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), ng))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: S = self.value(x).data().iter().copied().sum();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), S::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Tensor<S>>], id: NodeId) -> Option<&'a mut Tensor<S>> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(id).shape()));
        }
        slot.as_mut()
    }

    fn backprop_node(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).as_matrix();
                let n = self.value(*b).shape()[1];
                let bval = self.value(*b).data();
                let aval = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        gd,
                        MatView::row_major(n),
                        bval,
                        MatView::transposed(n),
                        S::one(),
                        ga.data_mut(),
                        MatView::row_major(k),
                    );
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        aval,
                        MatView::transposed(k),
                        gd,
                        MatView::row_major(n),
                        S::one(),
                        gb.data_mut(),
                        MatView::row_major(n),
                    );
                }
            }
            Op::AddBias(x, b) => {
                let cols = self.value(*b).len();
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, &v) in gx.data_mut().iter_mut().zip(gd) {
                        *o = *o + v;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let gbd = gb.data_mut();
                    for row in gd.chunks(cols) {
                        for (o, &v) in gbd.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(gx) = self.acc(grads, id) {
                        for (o, &v) in gx.data_mut().iter_mut().zip(gd) {
                            *o = *o + v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, &v), &bb) in ga.data_mut().iter_mut().zip(gd).zip(&bv) {
                        *o = *o + v * bb;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((o, &v), &aa) in gb.data_mut().iter_mut().zip(gd).zip(&av) {
                        *o = *o + v * aa;
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                if let Some(ga) = self.acc(grads, *a) {
                    for (o, &v) in ga.data_mut().iter_mut().zip(gd) {
                        *o = *o + v * s;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((o, &v), &xx) in gx.data_mut().iter_mut().zip(gd).zip(xv) {
                        let d = S::from_f64_lossy(gelu_parts(xx.as_f64()).1);
                        *o = *o + v * d;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let (rows, cols) = self.value(*x).as_matrix();
                let xv = self.value(*x).data();
                let gam = self.value(*gamma).data();
                let inv_n = S::one() / S::from_usize(cols).unwrap();
                if let Some(gg) = self.acc(grads, *gamma) {
                    let ggd = gg.data_mut();
                    for r in 0..rows {
                        for c in 0..cols {
                            let xhat = (xv[r * cols + c] - mean[r]) * rstd[r];
                            ggd[c] = ggd[c] + gd[r * cols + c] * xhat;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    let gbd = gb.data_mut();
                    for row in gd.chunks(cols) {
                        for (o, &v) in gbd.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let gxd = gx.data_mut();
                    let mut dxhat = vec![S::zero(); cols];
                    for r in 0..rows {
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for c in 0..cols {
                            let xhat = (xv[r * cols + c] - mean[r]) * rstd[r];
                            let dh = gd[r * cols + c] * gam[c];
                            dxhat[c] = dh;
                            m1 = m1 + dh;
                            m2 = m2 + dh * xhat;
                        }
                        m1 = m1 * inv_n;
                        m2 = m2 * inv_n;
                        for c in 0..cols {
                            let xhat = (xv[r * cols + c] - mean[r]) * rstd[r];
                            gxd[r * cols + c] =
                                gxd[r * cols + c] + rstd[r] * (dxhat[c] - m1 - xhat * m2);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, batch, tokens, heads, probs } => {
                let (rows, width) = self.value(*q).as_matrix();
                let (batch, tokens, heads) = (*batch, *tokens, *heads);
                let dk = width / heads;
                let scale = S::one() / S::from_usize(dk).unwrap().sqrt();
                let qd = self.value(*q).data();
                let kd = self.value(*k).data();
                let vd = self.value(*v).data();
                let mut dq = vec![S::zero(); rows * width];
                let mut dkm = vec![S::zero(); rows * width];
                let mut dv = vec![S::zero(); rows * width];
                let mut dp = vec![S::zero(); tokens * tokens];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = b * tokens * width + h * dk;
                        let p_off = (b * heads + h) * tokens * tokens;
                        let p = &probs[p_off..p_off + tokens * tokens];
                        // dP = dO V^T
                        gemm(
                            tokens,
                            dk,
                            tokens,
                            S::one(),
                            gd,
                            MatView::row_major(width).at(off),
                            vd,
                            MatView::transposed(width).at(off),
                            S::zero(),
                            &mut dp,
                            MatView::row_major(tokens),
                        );
                        // dV = P^T dO
                        gemm(
                            tokens,
                            tokens,
                            dk,
                            S::one(),
                            p,
                            MatView::transposed(tokens),
                            gd,
                            MatView::row_major(width).at(off),
                            S::one(),
                            &mut dv,
                            MatView::row_major(width).at(off),
                        );
                        // dS = P * (dP - rowsum(dP * P))
                        for r in 0..tokens {
                            let row = r * tokens;
                            let dot: S =
                                (0..tokens).map(|c| dp[row + c] * p[row + c]).sum();
                            for c in 0..tokens {
                                dp[row + c] = p[row + c] * (dp[row + c] - dot);
                            }
                        }
                        gemm(
                            tokens,
                            tokens,
                            dk,
                            scale,
                            &dp,
                            MatView::row_major(tokens),
                            kd,
                            MatView::row_major(width).at(off),
                            S::one(),
                            &mut dq,
                            MatView::row_major(width).at(off),
                        );
                        gemm(
                            tokens,
                            tokens,
                            dk,
                            scale,
                            &dp,
                            MatView::transposed(tokens),
                            qd,
                            MatView::row_major(width).at(off),
                            S::one(),
                            &mut dkm,
                            MatView::row_major(width).at(off),
                        );
                    }
                }
                for (id, buf) in [(*q, dq), (*k, dkm), (*v, dv)] {
                    if let Some(gx) = self.acc(grads, id) {
                        for (o, &val) in gx.data_mut().iter_mut().zip(&buf) {
                            *o = *o + val;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, &v) in gx.data_mut().iter_mut().zip(gd) {
                        *o = *o + v;
                    }
                }
            }
            Op::Unfold3 { x, batch, len } => {
                let (_, ch) = self.value(*x).as_matrix();
                let (batch, len) = (*batch, *len);
                if let Some(gx) = self.acc(grads, *x) {
                    let gxd = gx.data_mut();
                    for b in 0..batch {
                        for l in 0..len {
                            let orow = (b * len + l) * 3 * ch;
                            for j in 0..3 {
                                let src = l as isize + j as isize - 1;
                                if src < 0 || src >= len as isize {
                                    continue;
                                }
                                let irow = (b * len + src as usize) * ch;
                                for c in 0..ch {
                                    gxd[irow + c] = gxd[irow + c] + gd[orow + j * ch + c];
                                }
                            }
                        }
                    }
                }
            }
            Op::ConcatSeq { parts, batch } => {
                let width = g.as_matrix().1;
                let total: usize = parts.iter().map(|p| p.1).sum();
                for b in 0..*batch {
                    let mut row = b * total;
                    for &(id, n) in parts {
                        if let Some(gx) = self.acc(grads, id) {
                            let dst = &mut gx.data_mut()[b * n * width..(b + 1) * n * width];
                            for (o, &v) in dst.iter_mut().zip(&gd[row * width..(row + n) * width]) {
                                *o = *o + v;
                            }
                        }
                        row += n;
                    }
                }
            }
            Op::BroadcastBatch { x, batch } => {
                let len = self.value(*x).len();
                if let Some(gx) = self.acc(grads, *x) {
                    let gxd = gx.data_mut();
                    for b in 0..*batch {
                        for (o, &v) in gxd.iter_mut().zip(&gd[b * len..(b + 1) * len]) {
                            *o = *o + v;
                        }
                    }
                }
            }
            Op::ScalarEmbed { x, w, b } => {
                let (batch, p) = self.value(*x).as_matrix();
                let d = self.value(*w).shape()[1];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if let Some(gw) = self.acc(grads, *w) {
                    let gwd = gw.data_mut();
                    for bi in 0..batch {
                        for pi in 0..p {
                            let xv = xd[bi * p + pi];
                            let o = (bi * p + pi) * d;
                            for c in 0..d {
                                gwd[pi * d + c] = gwd[pi * d + c] + xv * gd[o + c];
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let gbd = gb.data_mut();
                    for bi in 0..batch {
                        for pi in 0..p {
                            let o = (bi * p + pi) * d;
                            for c in 0..d {
                                gbd[pi * d + c] = gbd[pi * d + c] + gd[o + c];
                            }
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let gxd = gx.data_mut();
                    for bi in 0..batch {
                        for pi in 0..p {
                            let o = (bi * p + pi) * d;
                            let dot: S = (0..d).map(|c| gd[o + c] * wd[pi * d + c]).sum();
                            gxd[bi * p + pi] = gxd[bi * p + pi] + dot;
                        }
                    }
                }
            }
            Op::TokenReadout { h, w, b, tokens, offset } => {
                let (rows, d) = self.value(*h).as_matrix();
                let p = self.value(*w).shape()[0];
                let batch = rows / tokens;
                let hd = self.value(*h).data();
                let wd = self.value(*w).data();
                if let Some(gh) = self.acc(grads, *h) {
                    let ghd = gh.data_mut();
                    for bi in 0..batch {
                        for pi in 0..p {
                            let row = (bi * tokens + offset + pi) * d;
                            let gv = gd[bi * p + pi];
                            for c in 0..d {
                                ghd[row + c] = ghd[row + c] + gv * wd[pi * d + c];
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    let gwd = gw.data_mut();
                    for bi in 0..batch {
                        for pi in 0..p {
                            let row = (bi * tokens + offset + pi) * d;
                            let gv = gd[bi * p + pi];
                            for c in 0..d {
                                gwd[pi * d + c] = gwd[pi * d + c] + gv * hd[row + c];
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let gbd = gb.data_mut();
                    for bi in 0..batch {
                        for pi in 0..p {
                            gbd[pi] = gbd[pi] + gd[bi * p + pi];
                        }
                    }
                }
            }
            Op::MeanPool { h, batch } => {
                let (rows, d) = self.value(*h).as_matrix();
                let n = rows / batch;
                let inv = S::one() / S::from_usize(n).unwrap();
                if let Some(gh) = self.acc(grads, *h) {
                    let ghd = gh.data_mut();
                    for b in 0..*batch {
                        for t in 0..n {
                            let row = (b * n + t) * d;
                            for c in 0..d {
                                ghd[row + c] = ghd[row + c] + gd[b * d + c] * inv;
                            }
                        }
                    }
                }
            }
            Op::Mse(pred, target) => {
                let pv = self.value(*pred).data();
                let tv = self.value(*target).data();
                let n = S::from_usize(pv.len()).unwrap();
                let two = S::from_f64_lossy(2.0);
                let g0 = gd[0];
                if let Some(gp) = self.acc(grads, *pred) {
                    for ((o, &a), &b) in gp.data_mut().iter_mut().zip(pv).zip(tv) {
                        *o = *o + g0 * two * (a - b) / n;
                    }
                }
                if let Some(gt) = self.acc(grads, *target) {
                    for ((o, &a), &b) in gt.data_mut().iter_mut().zip(pv).zip(tv) {
                        *o = *o - g0 * two * (a - b) / n;
                    }
                }
            }
            Op::SumAll(x) => {
                let g0 = gd[0];
                if let Some(gx) = self.acc(grads, *x) {
                    for o in gx.data_mut() {
                        *o = *o + g0;
                    }
                }
            }
        }
    }
}

fn softmax_rows<S: Scalar>(p: &mut [S], cols: usize) {
    for row in p.chunks_mut(cols) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = S::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: HashMap<ParamId, NodeId>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<S>> {
        self.grads[node.0].as_ref()
    }

    /// One gradient per stored parameter, zero for parameters that did not
    /// take part in the graph.
    pub fn for_params(&self, store: &ParamStore<S>) -> Vec<Tensor<S>> {
        store
            .ids()
            .map(|id| {
                self.params
                    .get(&id)
                    .and_then(|n| self.grads[n.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn sum_of_weights_has_unit_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", t(&[2, 3], &[0.5, -1.0, 2.0, 3.0, 0.1, -0.2]));
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let loss = g.sum_all(wn);
        let grads = g.backward(loss).unwrap().for_params(&store);
        assert!(grads[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_squared_norm_has_gradient_w() {
        let mut store = ParamStore::<f64>::new();
        let vals = [0.3, -0.7, 1.5, 2.0];
        let w = store.add("w", t(&[4], &vals));
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let sq = g.mul(wn, wn).unwrap();
        let s = g.sum_all(sq);
        let loss = g.scale(s, 0.5);
        let grads = g.backward(loss).unwrap().for_params(&store);
        assert_eq!(grads[0].data(), &vals);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", t(&[2], &[1.0, 2.0]));
        let b = store.add("b", t(&[3], &[1.0, 2.0, 3.0]));
        let mut g = Graph::new();
        let an = g.param(&store, a);
        let loss = g.sum_all(an);
        let grads = g.backward(loss).unwrap().for_params(&store);
        assert!(grads[store.id_of("b").unwrap().0].data().iter().all(|&v| v == 0.0));
        assert_eq!(b.0, 1);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut p: Vec<f64> = vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0];
        softmax_rows(&mut p, 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unfold3_pads_edges_with_zero() {
        let mut g = Graph::<f64>::new();
        // batch 1, len 3, 1 channel
        let x = g.input(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let u = g.unfold3(x, 1, 3).unwrap();
        assert_eq!(g.value(u).data(), &[0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn concat_seq_interleaves_per_sequence() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 1], &[1.0, 2.0])); // batch 2, 1 token each
        let b = g.input(t(&[4, 1], &[10.0, 11.0, 20.0, 21.0])); // batch 2, 2 tokens each
        let c = g.concat_seq(&[(a, 1), (b, 2)], 2).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 10.0, 11.0, 2.0, 20.0, 21.0]);
    }
}
