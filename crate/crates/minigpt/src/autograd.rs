//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied during one forward pass as an
//! append-only list of nodes, so inputs always precede the nodes that use them.
//! [`Tape::backward`] walks that list in exact reverse order. A fresh tape is
//! built for every forward pass.
//!
//! Parameters are borrowed into the tape with [`Tape::param`]; the gradients
//! returned by `backward` are then accumulated into a separate store by the
//! caller, which keeps parameters immutable for the lifetime of the tape.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::rng::RandomState;
use crate::tensor::{gemm, IdTensor, MatView, Scalar, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, dims: MatMulDims },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: S },
    Sum { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<S>, rstd: Vec<S> },
    Gelu { x: Var },
    Softmax { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, lse: Vec<S> },
    Dropout { x: Var, mask: Vec<S> },
    Transpose { x: Var },
    Reshape { x: Var },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    CausalMask { x: Var },
}

#[derive(Clone, Copy, Debug)]
struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
}

#[derive(Debug)]
struct Node<'p, S: Scalar> {
    value: Cow<'p, Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
///
/// Only leaves recorded with `requires_grad` carry a gradient.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&[S]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<S>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Record of operations for one forward pass.
#[derive(Debug)]
pub struct Tape<'p, S: Scalar = f32> {
    nodes: Vec<Node<'p, S>>,
    grad_enabled: bool,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape on which nothing requires a gradient (evaluation and sampling).
    pub fn no_grad() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Registers an owned input tensor.
    pub fn leaf(&mut self, tensor: Tensor<S>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.push(Cow::Owned(tensor), Op::Leaf, requires_grad)
    }

    /// Registers a borrowed parameter that receives a gradient.
    pub fn param(&mut self, tensor: &'p Tensor<S>) -> Var {
        let requires_grad = self.grad_enabled;
        self.push(Cow::Borrowed(tensor), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor, false)
    }

    fn push(&mut self, value: Cow<'p, Tensor<S>>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(Tensor::from_parts(shape, data)), op, requires_grad)
    }

    /// Matrix product over the last two dimensions, `[..., m, k] x [..., k, n]`.
    ///
    /// Leading batch dimensions must be equal, or one operand must be a plain
    /// matrix that is reused for every batch entry.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch { op: "matmul", lhs: sa.clone(), rhs: sb.clone() };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (lead_a, lead_b) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (lead, a_batched, b_batched) = if lead_a == lead_b {
            (lead_a, !lead_a.is_empty(), !lead_b.is_empty())
        } else if lead_b.is_empty() {
            (lead_a, true, false)
        } else if lead_a.is_empty() {
            (lead_b, false, true)
        } else {
            return Err(mismatch());
        };
        let batch: usize = lead.iter().product();
        let dims = MatMulDims { batch, m, k, n, a_batched, b_batched };
        let mut out = vec![S::ZERO; batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            if a_batched && !b_batched {
                gemm(ad, MatView::new(0, batch * m, k), bd, MatView::new(0, k, n), S::ZERO, &mut out, 0);
            } else {
                for i in 0..batch {
                    let ao = if a_batched { i * m * k } else { 0 };
                    let bo = if b_batched { i * k * n } else { 0 };
                    gemm(ad, MatView::new(ao, m, k), bd, MatView::new(bo, k, n), S::ZERO, &mut out, i * m * n);
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(self.push_op(shape, out, Op::MatMul { a, b, dims }, &[a, b]))
    }

    /// Elementwise sum; `b` may also be a trailing-dimension slice of `a`'s
    /// shape (for example a `[d]` bias added to every row of `[B, T, d]`).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let first_real = sb.iter().position(|&d| d != 1).unwrap_or(sb.len());
        let core = &sb[first_real..];
        if sa != sb && (core.len() > sa.len() || !sa.ends_with(core)) {
            return Err(Error::ShapeMismatch { op: "add", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let shape = sa.to_vec();
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ad.len());
        for chunk in ad.chunks_exact(bd.len()) {
            out.extend(chunk.iter().zip(bd).map(|(&x, &y)| x + y));
        }
        Ok(self.push_op(shape, out, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product of two equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch { op: "mul", lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        let shape = self.shape(a).to_vec();
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        Ok(self.push_op(shape, out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = S::from_f64(c);
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        self.push_op(shape, out, Op::Scale { x, c }, &[x])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(S::ZERO, |acc, &v| acc + v);
        self.push_op(vec![1], vec![total], Op::Sum { x }, &[x])
    }

    /// Normalizes over the last dimension (population variance), then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("layer_norm eps must be positive, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensors have rank >= 1");
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::ShapeMismatch { op: "layer_norm", lhs: shape, rhs: self.shape(p).to_vec() });
            }
        }
        let (xd, gd, bd) = (self.value(x).data(), self.value(gain).data(), self.value(bias).data());
        let rows = xd.len() / d;
        let (mut mean, mut rstd) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
        let mut out = vec![S::ZERO; xd.len()];
        let inv_d = S::from_f64(1.0 / d as f64);
        let eps = S::from_f64(eps);
        for (row, y) in xd.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mu = row.iter().fold(S::ZERO, |a, &v| a + v) * inv_d;
            let var = row.iter().fold(S::ZERO, |a, &v| a + (v - mu) * (v - mu)) * inv_d;
            let r = S::ONE / (var + eps).sqrt();
            for j in 0..d {
                y[j] = (row[j] - mu) * r * gd[j] + bd[j];
            }
            mean.push(mu);
            rstd.push(r);
        }
        Ok(self.push_op(shape, out, Op::LayerNorm { x, gain, bias, mean, rstd }, &[x, gain, bias]))
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|&v| gelu_value(v)).collect();
        self.push_op(shape, out, Op::Gelu { x }, &[x])
    }

    /// Softmax over the last dimension, stabilized by subtracting each row max.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("tensors have rank >= 1");
        let xd = self.value(x).data();
        let mut out = vec![S::ZERO; xd.len()];
        for (r, (row, y)) in xd.chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
            softmax_row(row, y).ok_or(Error::MalformedMask { row: r })?;
        }
        Ok(self.push_op(shape, out, Op::Softmax { x }, &[x]))
    }

    /// Gathers rows of `table` (`[V, d]`); output shape is `ids.shape() + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &IdTensor) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(Error::InvalidArgument(format!("embedding table must be 2-D, got {ts:?}")));
        }
        let (vocab_size, d) = (ts[0], ts[1]);
        if let Some(&id) = ids.ids().iter().find(|&&id| id >= vocab_size) {
            return Err(Error::IdOutOfRange { id, vocab_size });
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids.ids() {
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let mut shape = ids.shape().to_vec();
        shape.push(d);
        Ok(self.push_op(shape, out, Op::Embedding { table, ids: ids.ids().to_vec() }, &[table]))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`,
    /// for logits of shape `[N, V]`.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::ShapeMismatch { op: "cross_entropy", lhs: shape.to_vec(), rhs: vec![targets.len()] });
        }
        let v = shape[1];
        if let Some(&id) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::IdOutOfRange { id, vocab_size: v });
        }
        let ld = self.value(logits).data();
        let mut lse = Vec::with_capacity(targets.len());
        let mut total = 0.0f64;
        for (row, &t) in ld.chunks_exact(v).zip(targets) {
            let max = row.iter().fold(S::NEG_INFINITY, |m, &x| if x > m { x } else { m });
            let sum = row.iter().fold(S::ZERO, |a, &x| a + (x - max).exp());
            let l = max + sum.ln();
            total += (l - row[t]).to_f64();
            lse.push(l);
        }
        let loss = S::from_f64(total / targets.len() as f64);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), lse };
        Ok(self.push_op(vec![1], vec![loss], op, &[logits]))
    }

    /// Inverted dropout. Identity (the same `Var`) when `training` is false or
    /// `p == 0`; otherwise draws one uniform per element, in element order.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut RandomState) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = S::from_f64(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<S> = (0..n).map(|_| if rng.uniform() < p { S::ZERO } else { keep }).collect();
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push_op(shape, out, Op::Dropout { x, mask }, &[x]))
    }

    /// Swaps the last two dimensions.
    pub fn transpose_last_two(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidArgument(format!("transpose needs rank >= 2, got {shape:?}")));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let out = transpose_blocks(self.value(x).data(), r, c);
        let mut new_shape = shape;
        let len = new_shape.len();
        new_shape.swap(len - 2, len - 1);
        Ok(self.push_op(new_shape, out, Op::Transpose { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: self.shape(x).to_vec(), rhs: shape.to_vec() });
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push_op(shape.to_vec(), data, Op::Reshape { x }, &[x]))
    }

    /// `[B, T, H*D] -> [B, H, T, D]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || heads == 0 || !shape[2].is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("cannot split shape {shape:?} into {heads} heads")));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2] / heads);
        let out = permute_bthd(self.value(x).data(), b, t, heads, d, true);
        Ok(self.push_op(vec![b, heads, t, d], out, Op::SplitHeads { x, heads }, &[x]))
    }

    /// `[B, H, T, D] -> [B, T, H*D]`, the inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::InvalidArgument(format!("merge_heads needs rank 4, got {shape:?}")));
        }
        let (b, heads, t, d) = (shape[0], shape[1], shape[2], shape[3]);
        let out = permute_bthd(self.value(x).data(), b, t, heads, d, false);
        Ok(self.push_op(vec![b, t, heads * d], out, Op::MergeHeads { x, heads }, &[x]))
    }

    /// Fills every entry above the diagonal of the trailing `[T, T]` matrices
    /// with `-inf` (query `i` may attend to key `j` only when `j <= i`).
    pub fn masked_fill_causal(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2] {
            return Err(Error::InvalidArgument(format!("causal mask needs square trailing dims, got {shape:?}")));
        }
        let t = shape[shape.len() - 1];
        let mut out = self.value(x).data().to_vec();
        for block in out.chunks_exact_mut(t * t) {
            for i in 0..t {
                block[i * t + i + 1..(i + 1) * t].fill(S::NEG_INFINITY);
            }
        }
        Ok(self.push_op(shape, out, Op::CausalMask { x }, &[x]))
    }

    /// `x @ weight + bias` with `weight: [in, out]` and `bias: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add(y, bias)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns fresh gradients for every leaf that requires one; running it
    /// twice on the same tape yields bit-identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let value = self.value(loss);
        if !value.is_scalar() {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![S::ONE]);
        let mut leaves: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                leaves[i] = Some(g);
            } else {
                self.propagate(i, &g, &mut grads);
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, dims } => {
                let MatMulDims { batch, m, k, n, a_batched, b_batched } = *dims;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.grad_slot(*a, grads) {
                    // dA = dC · Bᵀ
                    if a_batched && !b_batched {
                        gemm(g, MatView::new(0, batch * m, n), bd, MatView::new(0, k, n).t(), S::ONE, ga, 0);
                    } else {
                        for bi in 0..batch {
                            let bo = if b_batched { bi * k * n } else { 0 };
                            let ao = if a_batched { bi * m * k } else { 0 };
                            gemm(g, MatView::new(bi * m * n, m, n), bd, MatView::new(bo, k, n).t(), S::ONE, ga, ao);
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(*b, grads) {
                    // dB = Aᵀ · dC
                    if a_batched && !b_batched {
                        gemm(ad, MatView::new(0, batch * m, k).t(), g, MatView::new(0, batch * m, n), S::ONE, gb, 0);
                    } else {
                        for bi in 0..batch {
                            let ao = if a_batched { bi * m * k } else { 0 };
                            let bo = if b_batched { bi * k * n } else { 0 };
                            gemm(ad, MatView::new(ao, m, k).t(), g, MatView::new(bi * m * n, m, n), S::ONE, gb, bo);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                self.accumulate(*a, grads, g.iter().copied());
                if let Some(gb) = self.grad_slot(*b, grads) {
                    let bn = gb.len();
                    for chunk in g.chunks_exact(bn) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(*a, grads, g.iter().zip(bd).map(|(&gi, &bv)| gi * bv));
                self.accumulate(*b, grads, g.iter().zip(ad).map(|(&gi, &av)| gi * av));
            }
            Op::Scale { x, c } => {
                self.accumulate(*x, grads, g.iter().map(|&gi| gi * *c));
            }
            Op::Sum { x } => {
                if let Some(gx) = self.grad_slot(*x, grads) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xd = self.value(*x).data();
                let gd = self.value(*gain).data();
                let d = gd.len();
                let inv_d = S::from_f64(1.0 / d as f64);
                if let Some(gg) = self.grad_slot(*gain, grads) {
                    for (r, (row, gr)) in xd.chunks_exact(d).zip(g.chunks_exact(d)).enumerate() {
                        for j in 0..d {
                            gg[j] += gr[j] * (row[j] - mean[r]) * rstd[r];
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(*bias, grads) {
                    for gr in g.chunks_exact(d) {
                        gb.iter_mut().zip(gr).for_each(|(v, &y)| *v += y);
                    }
                }
                if let Some(gx) = self.grad_slot(*x, grads) {
                    let mut xhat = vec![S::ZERO; d];
                    let mut dxhat = vec![S::ZERO; d];
                    for (r, ((row, gr), dx)) in
                        xd.chunks_exact(d).zip(g.chunks_exact(d)).zip(gx.chunks_exact_mut(d)).enumerate()
                    {
                        let (mut m1, mut m2) = (S::ZERO, S::ZERO);
                        for j in 0..d {
                            xhat[j] = (row[j] - mean[r]) * rstd[r];
                            dxhat[j] = gr[j] * gd[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            dx[j] += rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xd = self.value(*x).data();
                self.accumulate(*x, grads, g.iter().zip(xd).map(|(&gi, &xi)| gi * gelu_derivative(xi)));
            }
            Op::Softmax { x } => {
                if let Some(gx) = self.grad_slot(*x, grads) {
                    let n = *node.value.shape().last().expect("rank >= 1");
                    for ((y, gr), dx) in out.chunks_exact(n).zip(g.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                        let dot = y.iter().zip(gr).fold(S::ZERO, |a, (&yi, &gi)| a + yi * gi);
                        for j in 0..n {
                            dx[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = self.grad_slot(*table, grads) {
                    let d = self.shape(*table)[1];
                    for (&id, gr) in ids.iter().zip(g.chunks_exact(d)) {
                        gt[id * d..(id + 1) * d].iter_mut().zip(gr).for_each(|(v, &y)| *v += y);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, lse } => {
                let ld = self.value(*logits).data();
                if let Some(gl) = self.grad_slot(*logits, grads) {
                    let v = self.shape(*logits)[1];
                    let scale = g[0] * S::from_f64(1.0 / targets.len() as f64);
                    for (r, (row, dl)) in ld.chunks_exact(v).zip(gl.chunks_exact_mut(v)).enumerate() {
                        for j in 0..v {
                            let p = (row[j] - lse[r]).exp();
                            let y = if j == targets[r] { S::ONE } else { S::ZERO };
                            dl[j] += (p - y) * scale;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                self.accumulate(*x, grads, g.iter().zip(mask).map(|(&gi, &m)| gi * m));
            }
            Op::Transpose { x } => {
                if self.nodes[x.0].requires_grad {
                    let s = self.shape(*x);
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    // g has the transposed shape [.., c, r]
                    self.accumulate(*x, grads, transpose_blocks(g, c, r).into_iter());
                }
            }
            Op::Reshape { x } => {
                self.accumulate(*x, grads, g.iter().copied());
            }
            Op::SplitHeads { x, heads } => {
                if self.nodes[x.0].requires_grad {
                    let s = node.value.shape();
                    self.accumulate(*x, grads, permute_bthd(g, s[0], s[2], *heads, s[3], false).into_iter());
                }
            }
            Op::MergeHeads { x, heads } => {
                if self.nodes[x.0].requires_grad {
                    let s = self.shape(*x);
                    self.accumulate(*x, grads, permute_bthd(g, s[0], s[2], *heads, s[3], true).into_iter());
                }
            }
            Op::CausalMask { x } => {
                if let Some(gx) = self.grad_slot(*x, grads) {
                    let t = *node.value.shape().last().expect("rank >= 2");
                    for (gb, db) in g.chunks_exact(t * t).zip(gx.chunks_exact_mut(t * t)) {
                        for i in 0..t {
                            for j in 0..=i {
                                db[i * t + j] += gb[i * t + j];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds `contrib` into the gradient of `var`. The first contribution is
    /// collected directly, which avoids zero-filling a buffer only to add to it.
    fn accumulate(&self, var: Var, grads: &mut [Option<Vec<S>>], contrib: impl Iterator<Item = S>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(v, c)| *v += c),
            slot => *slot = Some(contrib.collect()),
        }
    }

    /// Zero-initialized gradient buffer for `var`, or `None` when it needs no gradient.
    fn grad_slot<'g>(&self, var: Var, grads: &'g mut [Option<Vec<S>>]) -> Option<&'g mut Vec<S>> {
        if !self.nodes[var.0].requires_grad {
            return None;
        }
        let n = self.nodes[var.0].value.numel();
        Some(grads[var.0].get_or_insert_with(|| vec![S::ZERO; n]))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu_value<S: Scalar>(x: S) -> S {
    let (c, a, half) = (S::from_f64(GELU_C), S::from_f64(GELU_A), S::from_f64(0.5));
    half * x * (S::ONE + (c * (x + a * x * x * x)).tanh())
}

fn gelu_derivative<S: Scalar>(x: S) -> S {
    let (c, a, half) = (S::from_f64(GELU_C), S::from_f64(GELU_A), S::from_f64(0.5));
    let th = (c * (x + a * x * x * x)).tanh();
    let du = c * (S::ONE + S::from_f64(3.0) * a * x * x);
    half * (S::ONE + th) + half * x * (S::ONE - th * th) * du
}

/// Softmax of one row into `out`; `None` if every entry is `-inf`.
pub(crate) fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) -> Option<()> {
    let max = lane_max(row);
    if max == S::NEG_INFINITY {
        if row.iter().all(|&x| x == S::NEG_INFINITY) {
            return None;
        }
        // only NaN and -inf remain; propagate NaN so callers see a non-finite result
        out.fill(S::from_f64(f64::NAN));
        return Some(());
    }
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
    }
    let inv = S::ONE / lane_sum(out);
    out.iter_mut().for_each(|o| *o *= inv);
    Some(())
}

/// Sum over eight interleaved partial accumulators, which lets the loop vectorize.
pub(crate) fn lane_sum<S: Scalar>(xs: &[S]) -> S {
    let mut acc = [S::ZERO; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder().iter().fold(S::ZERO, |a, &x| a + x);
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += x;
        }
    }
    acc.iter().fold(tail, |a, &x| a + x)
}

/// Largest element, ignoring NaN; `-inf` for an empty or all-NaN slice.
fn lane_max<S: Scalar>(xs: &[S]) -> S {
    let pick = |m: S, x: S| if x > m { x } else { m };
    let mut acc = [S::NEG_INFINITY; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder().iter().fold(S::NEG_INFINITY, |m, &x| pick(m, x));
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a = pick(*a, x);
        }
    }
    acc.iter().fold(tail, |m, &x| pick(m, x))
}

/// Transposes each contiguous `[r, c]` block of `data` to `[c, r]`.
fn transpose_blocks<S: Scalar>(data: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; data.len()];
    for (src, dst) in data.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

/// Moves between `[B, T, H, D]` and `[B, H, T, D]` layouts.
fn permute_bthd<S: Scalar>(data: &[S], b: usize, t: usize, h: usize, d: usize, to_heads: bool) -> Vec<S> {
    let mut out = vec![S::ZERO; data.len()];
    for bi in 0..b {
        for ti in 0..t {
            for hi in 0..h {
                let bthd = ((bi * t + ti) * h + hi) * d;
                let bhtd = ((bi * h + hi) * t + ti) * d;
                let (src, dst) = if to_heads { (bthd, bhtd) } else { (bhtd, bthd) };
                out[dst..dst + d].copy_from_slice(&data[src..src + d]);
            }
        }
    }
    out
}
