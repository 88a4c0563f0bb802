//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! copied in from a [`ParamStore`] on first use, so a graph never aliases
//! mutable model state. [`Graph::backward`] replays the tape in reverse and
//! returns the gradient of a scalar node with respect to every node;
//! [`Gradients::accumulate_into`] adds the parameter gradients into the
//! store (accumulation, never overwrite).

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::{
    dot, matmul_acc, matmul_at_acc, matmul_bt_acc, softmax_masked_row, softmax_row_backward,
};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// Per-sequence attention mask, laid out `[batch][query][key]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn from_fn(
        batch: usize,
        q_len: usize,
        k_len: usize,
        f: impl Fn(usize, usize, usize) -> bool,
    ) -> Self {
        let mut allowed = Vec::with_capacity(batch * q_len * k_len);
        for b in 0..batch {
            for i in 0..q_len {
                for j in 0..k_len {
                    allowed.push(f(b, i, j));
                }
            }
        }
        AttnMask {
            batch,
            q_len,
            k_len,
            allowed,
        }
    }

    /// Keys at padded positions are hidden from every query.
    pub fn padding(key_pad: &[bool], batch: usize, q_len: usize, k_len: usize) -> Self {
        AttnMask::from_fn(batch, q_len, k_len, |b, _, j| !key_pad[b * k_len + j])
    }

    /// Padding plus causality (`j <= i`).
    pub fn causal(key_pad: &[bool], batch: usize, len: usize) -> Self {
        AttnMask::from_fn(batch, len, len, |b, i, j| j <= i && !key_pad[b * len + j])
    }

    pub fn row(&self, b: usize, i: usize) -> &[bool] {
        let start = (b * self.q_len + i) * self.k_len;
        &self.allowed[start..start + self.k_len]
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Sum(NodeId),
    Dropout(NodeId, Vec<T>),
    Gather(NodeId, Vec<usize>),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SoftmaxMasked(NodeId, Rc<Vec<bool>>),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        mask: Rc<AttnMask>,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<T>,
        count: usize,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, NodeId>,
}

fn matrix<T: Scalar>(rows: usize, cols: usize, values: Vec<T>) -> Tensor<T> {
    Tensor::new(vec![rows, cols], values).expect("kernel output has matching size")
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        let (r, c) = self.dims(id);
        vec![r, c]
    }

    fn vals(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.values()
    }

    /// Constant leaf. Gradients with respect to inputs are still reported.
    pub fn input(&mut self, tensor: Tensor<T>) -> NodeId {
        let (r, c) = (tensor.rows(), tensor.cols());
        let values = tensor.into_values();
        self.push(matrix(r, c, values), Op::Input)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, pid: ParamId) -> NodeId {
        if let Some(&id) = self.params.get(&pid) {
            return id;
        }
        let t = store.get(pid).tensor();
        let value = matrix(t.rows(), t.cols(), t.values().to_vec());
        let id = self.push(value, Op::Param);
        self.params.insert(pid, id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape_of(a),
                right: self.shape_of(b),
            });
        }
        let mut out = vec![T::zero(); n * m];
        matmul_acc(self.vals(a), self.vals(b), &mut out, n, k, m);
        Ok(self.push(matrix(n, m, out), Op::MatMul(a, b)))
    }

    /// a · bᵀ
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_bt",
                left: self.shape_of(a),
                right: self.shape_of(b),
            });
        }
        let mut out = vec![T::zero(); n * m];
        matmul_bt_acc(self.vals(a), self.vals(b), &mut out, n, k, m);
        Ok(self.push(matrix(n, m, out), Op::MatMulBt(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let da = self.dims(a);
        if da != self.dims(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape_of(a),
                right: self.shape_of(b),
            });
        }
        Ok(da)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(matrix(r, c, out), Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(matrix(r, c, out), Op::Mul(a, b)))
    }

    /// Adds a `1×c` row vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(Error::Dimension {
                op: "add_row",
                left: self.shape_of(a),
                right: self.shape_of(row),
            });
        }
        let rv = self.vals(row);
        let out = self
            .vals(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(matrix(r, c, out), Op::AddRow(a, row)))
    }

    /// x · w + b, with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let (r, c) = self.dims(a);
        let out = self.vals(a).iter().map(|&x| x * s).collect();
        self.push(matrix(r, c, out), Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let out = self
            .vals(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        self.push(matrix(r, c, out), Op::Relu(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.vals(a).iter().copied().sum();
        self.push(matrix(1, 1, vec![s]), Op::Sum(a))
    }

    /// Inverted dropout. A zero rate records nothing and returns `a`.
    pub fn dropout<R: Rng>(&mut self, a: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return a;
        }
        let (r, c) = self.dims(a);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = self
            .vals(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        self.push(matrix(r, c, out), Op::Dropout(a, mask))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Lookup(format!(
                "row {bad} out of range for table with {rows} rows"
            )));
        }
        let tv = self.vals(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        Ok(self.push(matrix(ids.len(), c, out), Op::Gather(table, ids.to_vec())))
    }

    /// Row-wise normalisation to zero mean / unit variance, then `gain`/`bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        for p in [gain, bias] {
            if self.dims(p) != (1, c) {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    left: self.shape_of(x),
                    right: self.shape_of(p),
                });
            }
        }
        if !(eps > 0.0) {
            return Err(Error::Usage(format!("layer_norm eps must be positive, got {eps}")));
        }
        let eps = T::of(eps);
        let n = T::of(c as f64);
        let (xv, gv, bv) = (self.vals(x), self.vals(gain), self.vals(bias));
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * gv[j] + bv[j]);
            }
        }
        Ok(self.push(
            matrix(r, c, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Row-wise softmax over entries where `mask` is true.
    pub fn softmax_masked(&mut self, scores: NodeId, mask: &[bool]) -> Result<NodeId> {
        let (r, c) = self.dims(scores);
        if mask.len() != r * c {
            return Err(Error::Dimension {
                op: "softmax_masked",
                left: self.shape_of(scores),
                right: vec![mask.len()],
            });
        }
        let mut out = vec![T::zero(); r * c];
        let sv = self.vals(scores);
        for i in 0..r {
            let span = i * c..(i + 1) * c;
            softmax_masked_row(&sv[span.clone()], &mask[span.clone()], &mut out[span], i)?;
        }
        Ok(self.push(
            matrix(r, c, out),
            Op::SoftmaxMasked(scores, Rc::new(mask.to_vec())),
        ))
    }

    /// Fused multi-head scaled dot-product attention over a padded batch.
    ///
    /// `q` is `[batch·q_len × d]`, `k` and `v` are `[batch·k_len × d]`; head
    /// `h` reads columns `h·d/heads .. (h+1)·d/heads`. Sequences never attend
    /// across batch entries. Output has the shape of `q` (heads concatenated).
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        mask: Rc<AttnMask>,
    ) -> Result<NodeId> {
        let (qr, d) = self.dims(q);
        let (kr, dk) = self.dims(k);
        let bad = heads == 0
            || d % heads != 0
            || dk != d
            || self.dims(v) != (kr, d)
            || qr != mask.batch * mask.q_len
            || kr != mask.batch * mask.k_len;
        if bad {
            return Err(Error::Dimension {
                op: "attention",
                left: self.shape_of(q),
                right: self.shape_of(k),
            });
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (bsz, sq, sk) = (mask.batch, mask.q_len, mask.k_len);
        let (qv, kv, vv) = (self.vals(q), self.vals(k), self.vals(v));
        let mut probs = vec![T::zero(); bsz * heads * sq * sk];
        let mut out = vec![T::zero(); qr * d];
        let mut scores = vec![T::zero(); sk];
        for b in 0..bsz {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..sq {
                    let qrow = (b * sq + i) * d + col;
                    let qi = &qv[qrow..qrow + dh];
                    let allowed = mask.row(b, i);
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = if allowed[j] {
                            let krow = (b * sk + j) * d + col;
                            dot(qi, &kv[krow..krow + dh]) * scale
                        } else {
                            T::zero()
                        };
                    }
                    let pstart = ((b * heads + h) * sq + i) * sk;
                    let p = &mut probs[pstart..pstart + sk];
                    softmax_masked_row(&scores, allowed, p, b * sq + i)?;
                    let orow = &mut out[qrow..qrow + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if allowed[j] {
                            let vrow = (b * sk + j) * d + col;
                            for (o, &x) in orow.iter_mut().zip(&vv[vrow..vrow + dh]) {
                                *o += pj * x;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            matrix(qr, d, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            },
        ))
    }

    /// Mean negative log-likelihood over positions whose target is not
    /// `ignore`. Returns a `1×1` node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], ignore: usize) -> Result<NodeId> {
        let (n, v) = self.dims(logits);
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.shape_of(logits),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore && t >= v) {
            return Err(Error::Lookup(format!("target {bad} outside vocabulary of {v}")));
        }
        let count = targets.iter().filter(|&&t| t != ignore).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let all = vec![true; v];
        let lv = self.vals(logits);
        let mut probs = vec![T::zero(); n * v];
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            let row = &lv[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total += lse - row[t];
            softmax_masked_row(row, &all, &mut probs[i * v..(i + 1) * v], i)?;
        }
        let loss = total / T::of(count as f64);
        Ok(self.push(
            matrix(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
        ))
    }

    /// Reverse sweep from a `1×1` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: self.shape_of(loss),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (r, c) = (node.value.rows(), node.value.cols());
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [T])| {
            let len = self.nodes[id.0].value.len();
            let g = grads[id.0].get_or_insert_with(|| vec![T::zero(); len]);
            f(g);
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let m = c;
                let (av, bv) = (self.vals(*a), self.vals(*b));
                acc(*a, &mut |g| matmul_bt_acc(dy, bv, g, n, m, k));
                acc(*b, &mut |g| matmul_at_acc(av, dy, g, n, k, m));
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = self.dims(*a);
                let m = c;
                let (av, bv) = (self.vals(*a), self.vals(*b));
                acc(*a, &mut |g| matmul_acc(dy, bv, g, n, m, k));
                acc(*b, &mut |g| matmul_at_acc(dy, av, g, n, m, k));
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    acc(id, &mut |g| g.iter_mut().zip(dy).for_each(|(x, &d)| *x += d));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                acc(*a, &mut |g| {
                    for ((x, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *x += d * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((x, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *x += d * o;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(x, &d)| *x += d));
                acc(*row, &mut |g| {
                    for chunk in dy.chunks(c) {
                        g.iter_mut().zip(chunk).for_each(|(x, &d)| *x += d);
                    }
                });
            }
            Op::Scale(a, s) => {
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(x, &d)| *x += d * *s));
            }
            Op::Relu(a) => {
                let av = self.vals(*a);
                acc(*a, &mut |g| {
                    for ((x, &d), &v) in g.iter_mut().zip(dy).zip(av) {
                        if v > T::zero() {
                            *x += d;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let d = dy[0];
                acc(*a, &mut |g| g.iter_mut().for_each(|x| *x += d));
            }
            Op::Dropout(a, mask) => {
                acc(*a, &mut |g| {
                    for ((x, &d), &m) in g.iter_mut().zip(dy).zip(mask) {
                        *x += d * m;
                    }
                });
            }
            Op::Gather(table, ids) => {
                acc(*table, &mut |g| {
                    for (i, &row) in ids.iter().enumerate() {
                        let src = &dy[i * c..(i + 1) * c];
                        g[row * c..(row + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &d)| *x += d);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.vals(*gain);
                let n = T::of(c as f64);
                acc(*x, &mut |g| {
                    for i in 0..r {
                        let dyr = &dy[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..c {
                            let dh = dyr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= n;
                        mean_dh_h /= n;
                        for j in 0..c {
                            let dh = dyr[j] * gv[j];
                            g[i * c + j] += rstd[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (dyr, hr) in dy.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            g[j] += dyr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for dyr in dy.chunks(c) {
                        g.iter_mut().zip(dyr).for_each(|(x, &d)| *x += d);
                    }
                });
            }
            Op::SoftmaxMasked(scores, mask) => {
                let p = node.value.values();
                acc(*scores, &mut |g| {
                    for i in 0..r {
                        let span = i * c..(i + 1) * c;
                        softmax_row_backward(
                            &p[span.clone()],
                            &dy[span.clone()],
                            &mask[span.clone()],
                            &mut g[span],
                        );
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            } => self.attention_backward(dy, (*q, *k, *v), *heads, mask, probs, grads),
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                let (_, vsz) = self.dims(*logits);
                let scale = dy[0] / T::of(*count as f64);
                acc(*logits, &mut |g| {
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = &mut g[i * vsz..(i + 1) * vsz];
                        let p = &probs[i * vsz..(i + 1) * vsz];
                        for (x, &pv) in row.iter_mut().zip(p) {
                            *x += scale * pv;
                        }
                        row[t] -= scale;
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        dy: &[T],
        (q, k, v): (NodeId, NodeId, NodeId),
        heads: usize,
        mask: &AttnMask,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (_, d) = self.dims(q);
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (bsz, sq, sk) = (mask.batch, mask.q_len, mask.k_len);
        let (qv, kv, vv) = (self.vals(q), self.vals(k), self.vals(v));
        let mut dq = vec![T::zero(); qv.len()];
        let mut dk = vec![T::zero(); kv.len()];
        let mut dv = vec![T::zero(); vv.len()];
        let mut dp = vec![T::zero(); sk];
        let mut ds = vec![T::zero(); sk];
        for b in 0..bsz {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..sq {
                    let allowed = mask.row(b, i);
                    let pstart = ((b * heads + h) * sq + i) * sk;
                    let p = &probs[pstart..pstart + sk];
                    let orow = (b * sq + i) * d + col;
                    let dout = &dy[orow..orow + dh];
                    for j in 0..sk {
                        dp[j] = T::zero();
                        ds[j] = T::zero();
                        if !allowed[j] {
                            continue;
                        }
                        let vrow = (b * sk + j) * d + col;
                        dp[j] = dot(dout, &vv[vrow..vrow + dh]);
                        for (x, &g) in dv[vrow..vrow + dh].iter_mut().zip(dout) {
                            *x += p[j] * g;
                        }
                    }
                    softmax_row_backward(p, &dp, allowed, &mut ds);
                    let qi = &qv[orow..orow + dh];
                    for j in 0..sk {
                        if !allowed[j] {
                            continue;
                        }
                        let sj = ds[j] * scale;
                        let krow = (b * sk + j) * d + col;
                        for c in 0..dh {
                            dq[orow + c] += sj * kv[krow + c];
                            dk[krow + c] += sj * qi[c];
                        }
                    }
                }
            }
        }
        for (id, g) in [(q, dq), (k, dk), (v, dv)] {
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(x, &y)| *x += y),
                slot @ None => *slot = Some(g),
            }
        }
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: BTreeMap<ParamId, NodeId>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a node, or `None` if the loss does not depend on it.
    pub fn of(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn of_param(&self, pid: ParamId) -> Option<&[T]> {
        self.params.get(&pid).and_then(|&id| self.of(id))
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (&pid, &id) in &self.params {
            if let Some(g) = self.of(id) {
                store.accumulate(pid, g);
            }
        }
    }
}
