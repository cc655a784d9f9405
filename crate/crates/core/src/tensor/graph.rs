//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the reverse of
//! the node list is a valid topological order for the backward sweep.

use super::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{Float, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SliceLast {
        a: Var,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    SelectRow {
        a: Var,
        index: usize,
    },
    PrependRow {
        a: Var,
        row: Var,
    },
    Reshape(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&last, lead)) => (lead.iter().product(), last),
        None => (1, 1),
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t.detached(), Op::Leaf, true)
    }

    /// Registers every parameter as a leaf; `vars[i]` corresponds to `ParamId(i)`.
    pub fn bind(&mut self, params: &ParamSet<T>) -> Vec<Var> {
        params
            .iter()
            .map(|(_, _, t)| {
                let requires = t.requires_grad();
                self.push(t.detached(), Op::Leaf, requires)
            })
            .collect()
    }

    /// Like [`bind`](Self::bind) but as constants, for inference.
    pub fn bind_frozen(&mut self, params: &ParamSet<T>) -> Vec<Var> {
        params
            .iter()
            .map(|(_, _, t)| self.push(t.detached(), Op::Leaf, false))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// `a: [..., k] · b: [k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(self.dim_err("matmul", a, b));
        }
        let (m, k) = split_last(sa);
        let n = sb[1];
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut c = vec![T::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut c, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, c)?, Op::MatMul(a, b), rg))
    }

    /// Batched product `a: [B, m, k] · b: [B, k, n]`, or `b: [B, n, k]`
    /// transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(self.dim_err("bmm", a, b));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b {
            (sb[2], sb[1])
        } else {
            (sb[1], sb[2])
        };
        if kb != k {
            return Err(self.dim_err("bmm", a, b));
        }
        let mut c = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let ai = &ad[i * m * k..(i + 1) * m * k];
            let bi = &bd[i * k * n..(i + 1) * k * n];
            let ci = &mut c[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt_acc(ai, bi, ci, m, k, n);
            } else {
                gemm_acc(ai, bi, ci, m, k, n);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch, m, n], c)?,
            Op::BatchMatMul { a, b, trans_b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias rows,
    /// positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(self.dim_err("add_broadcast", a, b));
        }
        let bd = self.value(b).data();
        let inner = bd.len().max(1);
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % inner])
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddBroadcast(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * factor).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, factor), rg)
    }

    /// Row-wise softmax over the last axis, stabilized by subtracting the
    /// row maximum.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(i) = x.data().iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                context: "softmax input".into(),
                index: i,
            });
        }
        let (_, n) = split_last(x.shape());
        if n == 0 {
            return Err(Error::Shape {
                shape: x.shape().to_vec(),
                len: 0,
            });
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Normalizes each last-axis slice to zero mean / unit variance (biased
    /// variance), then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (_, d) = split_last(self.shape(x));
        if self.shape(gamma) != [d] {
            return Err(self.dim_err("layer_norm", x, gamma));
        }
        if self.shape(beta) != [d] {
            return Err(self.dim_err("layer_norm", x, beta));
        }
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let dn = T::of(d as f64);
        let mut xhat = Vec::with_capacity(xd.len());
        let mut rstd = Vec::with_capacity(xd.len() / d.max(1));
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Exact GELU, `x·Φ(x)` with the erf-based Gaussian CDF.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Gelu(a), rg)
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let k = s[1];
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Index {
                op: "cross_entropy",
                row,
                label,
                bound: k,
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            let lse = log_sum_exp(row);
            total += lse - row[label];
            for p in row.iter_mut() {
                *p = (*p - lse).exp();
            }
        }
        let b = T::of(labels.len().max(1) as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / b),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (rows, n) = split_last(&shape);
        if shape.is_empty() || start + len > n {
            return Err(Error::Dimension {
                op: "slice_last",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::SliceLast { a, start }, rg))
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Parameter("concat_last of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(self.dim_err("concat_last", first, p));
            }
            total += s[lead.len()];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let n = *self.shape(p).last().unwrap();
                out.extend_from_slice(&self.value(p).data()[r * n..(r + 1) * n]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatLast(parts.to_vec()), rg))
    }

    /// `a: [B, T, D] -> [B, D]` keeping token `index`.
    pub fn select_row(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || index >= s[1] {
            return Err(Error::Dimension {
                op: "select_row",
                lhs: s,
                rhs: vec![index],
            });
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * d);
        for i in 0..b {
            let off = (i * t + index) * d;
            out.extend_from_slice(&src[off..off + d]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![b, d], out)?,
            Op::SelectRow { a, index },
            rg,
        ))
    }

    /// `a: [B, N, D]`, `row: [D]` -> `[B, N + 1, D]` with `row` first.
    pub fn prepend_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || self.shape(row) != [s[2]] {
            return Err(self.dim_err("prepend_row", a, row));
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let (src, r) = (self.value(a).data(), self.value(row).data());
        let mut out = Vec::with_capacity(b * (n + 1) * d);
        for i in 0..b {
            out.extend_from_slice(r);
            out.extend_from_slice(&src[i * n * d..(i + 1) * n * d]);
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(
            Tensor::new(vec![b, n + 1, d], out)?,
            Op::PrependRow { a, row },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).detached().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Reverse sweep from `root`, seeding its gradient with ones. Results are
    /// read back through [`grad`](Self::grad); a second call starts afresh.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.value(root).numel()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, f: &dyn Fn(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = split_last(sa);
                let n = sb[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                send(*a, &|da| gemm_nt_acc(g, bd, da, m, n, k));
                send(*b, &|db| gemm_tn_acc(ad, g, db, m, k, n));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                send(*a, &|da| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bd[i * k * n..(i + 1) * k * n];
                        let dai = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            // b: n×k, dA = g·b
                            gemm_acc(gi, bi, dai, m, n, k);
                        } else {
                            gemm_nt_acc(gi, bi, dai, m, n, k);
                        }
                    }
                });
                send(*b, &|db| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &ad[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // dB (n×k) = gᵀ·a
                            gemm_tn_acc(gi, ai, dbi, m, n, k);
                        } else {
                            gemm_tn_acc(ai, gi, dbi, m, k, n);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                let add = |d: &mut [T]| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                send(*a, &add);
                send(*b, &add);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                send(*a, &|d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(bd) {
                        *d += g * y;
                    }
                });
                send(*b, &|d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(ad) {
                        *d += g * x;
                    }
                });
            }
            Op::AddBroadcast(a, b) => {
                send(*a, &|d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                send(*b, &|d| {
                    let inner = d.len().max(1);
                    for (i, &gv) in g.iter().enumerate() {
                        d[i % inner] += gv;
                    }
                });
            }
            Op::Scale(a, f) => {
                send(*a, &|d| {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *f)
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let (_, n) = split_last(node.value.shape());
                send(*a, &|d| {
                    for ((drow, yrow), grow) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: T = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum();
                        for ((d, &y), &g) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                let d = gam.len();
                let dn = T::of(d as f64);
                send(*x, &|dx| {
                    for (r, ((dxr, hr), gr)) in dx
                        .chunks_mut(d)
                        .zip(xhat.chunks(d))
                        .zip(g.chunks(d))
                        .enumerate()
                    {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            dxr[j] += rstd[r] / dn * (dn * dh - s1 - hr[j] * s2);
                        }
                    }
                });
                send(*gamma, &|dg| {
                    for (hr, gr) in xhat.chunks(d).zip(g.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                send(*beta, &|db| {
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xs = self.value(*a).data();
                send(*a, &|d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xs) {
                        *d += g * gelu_grad(x);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = g[0] / T::of(labels.len().max(1) as f64);
                send(*logits, &|d| {
                    for ((drow, prow), &label) in d.chunks_mut(k).zip(probs.chunks(k)).zip(labels) {
                        for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let target = if j == label { T::one() } else { T::zero() };
                            *d += scale * (p - target);
                        }
                    }
                });
            }
            Op::SliceLast { a, start } => {
                let n = *self.shape(*a).last().unwrap();
                let len = *node.value.shape().last().unwrap();
                send(*a, &|d| {
                    for (drow, grow) in d.chunks_mut(n).zip(g.chunks(len.max(1))) {
                        for (d, &g) in drow[*start..*start + len].iter_mut().zip(grow) {
                            *d += g;
                        }
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let total = *node.value.shape().last().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let n = *self.shape(p).last().unwrap();
                    let off = offset;
                    send(p, &|d| {
                        for (drow, grow) in d.chunks_mut(n.max(1)).zip(g.chunks(total)) {
                            for (d, &g) in drow.iter_mut().zip(&grow[off..off + n]) {
                                *d += g;
                            }
                        }
                    });
                    offset += n;
                }
            }
            Op::SelectRow { a, index } => {
                let s = self.shape(*a);
                let (t, d) = (s[1], s[2]);
                send(*a, &|da| {
                    for (i, grow) in g.chunks(d).enumerate() {
                        let off = (i * t + index) * d;
                        for (x, &gv) in da[off..off + d].iter_mut().zip(grow) {
                            *x += gv;
                        }
                    }
                });
            }
            Op::PrependRow { a, row } => {
                let s = self.shape(*a);
                let (n, d) = (s[1], s[2]);
                send(*a, &|da| {
                    for (i, dchunk) in da.chunks_mut(n * d).enumerate() {
                        let src = &g[(i * (n + 1) + 1) * d..(i + 1) * (n + 1) * d];
                        for (x, &gv) in dchunk.iter_mut().zip(src) {
                            *x += gv;
                        }
                    }
                });
                send(*row, &|dr| {
                    for gchunk in g.chunks(d * (n + 1)) {
                        for (x, &gv) in dr.iter_mut().zip(&gchunk[..d]) {
                            *x += gv;
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                send(*a, &|d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::Sum(a) => {
                send(*a, &|d| d.iter_mut().for_each(|d| *d += g[0]));
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn log_sum_exp<T: Float>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn gelu<T: Float>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}
