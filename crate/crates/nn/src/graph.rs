//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read from a borrowed [`ParamStore`] and never copied; [`Graph::backward`]
//! returns one gradient per parameter that took part in the pass.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_into, Tensor, SMALL_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Shape description for the fused scaled dot-product attention op.
#[derive(Debug, Clone)]
pub struct AttnSpec {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    /// `batch * k_len` flags; false marks padding keys.
    pub key_mask: Vec<bool>,
    /// Query t may only see keys s <= t.
    pub causal: bool,
}

enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Interleave(Vec<Var>),
    Blend(Var, Var, Vec<f64>),
    MulConst(Var, Tensor),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttnSpec,
        weights: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        include: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    Sum(Vec<Var>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Per-parameter gradients, `None` for parameters unused in the pass.
pub struct Grads(pub Vec<Option<Tensor>>);

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params.tensor(*p),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds the single row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(
            (r.rows(), r.cols()),
            (1, self.value(a).cols()),
            "add_row shape"
        );
        let r = r.data().to_vec();
        let mut out = self.value(a).clone();
        let cols = out.cols();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_mut(r)
                .copy_from_slice(&t.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(index.len(), t.cols());
        for (i, &src) in index.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(src));
        }
        let ng = self.ng(a);
        self.push(out, Op::Gather(a, index), ng)
    }

    /// Stacks S equally shaped (B x H) steps into (B*S x H), row `b*S + s`
    /// holding row `b` of step `s`.
    pub fn interleave(&mut self, steps: &[Var]) -> Var {
        let s_len = steps.len();
        let (b, h) = self.value(steps[0]).shape();
        let mut out = Tensor::zeros(b * s_len, h);
        for (s, v) in steps.iter().enumerate() {
            let t = self.value(*v);
            for r in 0..b {
                out.row_mut(r * s_len + s).copy_from_slice(t.row(r));
            }
        }
        let ng = steps.iter().any(|p| self.ng(*p));
        self.push(out, Op::Interleave(steps.to_vec()), ng)
    }

    /// Row-wise `m * new + (1 - m) * old`.
    pub fn blend(&mut self, new: Var, old: Var, mask: Vec<f64>) -> Var {
        let (x, y) = (self.value(new), self.value(old));
        assert_eq!(x.shape(), y.shape());
        let mut out = y.clone();
        let cols = out.cols();
        for (r, &m) in mask.iter().enumerate() {
            for (o, n) in out
                .row_mut(r)
                .iter_mut()
                .zip(&x.data()[r * cols..(r + 1) * cols])
            {
                *o = m * n + (1.0 - m) * *o;
            }
        }
        let ng = self.ng(new) || self.ng(old);
        self.push(out, Op::Blend(new, old, mask), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), c.shape());
        let data = x.data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        let ng = self.ng(a);
        self.push(out, Op::MulConst(a, c), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: f64 = 1e-5;
        let t = self.value(x);
        let (rows, d) = t.shape();
        let mut xhat = Tensor::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gg), bb) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Scaled dot-product attention, batched and multi-head.
    ///
    /// `q` is (B*T x d), `k` is (B*S x d), `v` is (B*S x dv). Queries with
    /// no visible key produce a zero context.
    #[allow(clippy::needless_range_loop)]
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttnSpec) -> Var {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (b_n, t_n, s_n, h_n) = (spec.batch, spec.q_len, spec.k_len, spec.heads);
        assert_eq!(qt.rows(), b_n * t_n, "attention query rows");
        assert_eq!(kt.rows(), b_n * s_n, "attention key rows");
        assert_eq!(vt.rows(), b_n * s_n, "attention value rows");
        assert_eq!(qt.cols(), kt.cols());
        assert_eq!(spec.key_mask.len(), b_n * s_n);
        let (dh, dvh) = (qt.cols() / h_n, vt.cols() / h_n);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut weights = vec![0.0; b_n * h_n * t_n * s_n];
        let mut out = Tensor::zeros(b_n * t_n, vt.cols());
        let mut scores = vec![0.0; s_n];
        for b in 0..b_n {
            for h in 0..h_n {
                for t in 0..t_n {
                    let qrow = &qt.row(b * t_n + t)[h * dh..(h + 1) * dh];
                    let mut max = f64::NEG_INFINITY;
                    for s in 0..s_n {
                        let visible = spec.key_mask[b * s_n + s] && !(spec.causal && s > t);
                        scores[s] = if visible {
                            let krow = &kt.row(b * s_n + s)[h * dh..(h + 1) * dh];
                            let sc = qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>() * scale;
                            max = max.max(sc);
                            sc
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let w = &mut weights[((b * h_n + h) * t_n + t) * s_n..][..s_n];
                    let mut z = 0.0;
                    for s in 0..s_n {
                        w[s] = if scores[s] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            (scores[s] - max).exp()
                        };
                        z += w[s];
                    }
                    let orow = &mut out.row_mut(b * t_n + t)[h * dvh..(h + 1) * dvh];
                    for s in 0..s_n {
                        w[s] /= z;
                        if w[s] != 0.0 {
                            let vrow = &vt.row(b * s_n + s)[h * dvh..(h + 1) * dvh];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += w[s] * x;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                weights,
            },
            ng,
        )
    }

    /// Mean token cross-entropy over rows with `include[i]`; a (1 x 1) result.
    /// With no included row the loss is exactly zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, include: Vec<bool>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len());
        assert_eq!(targets.len(), include.len());
        let probs = softmax_rows(l);
        let mut total = 0.0;
        let mut count = 0;
        for (r, (&t, &inc)) in targets.iter().zip(&include).enumerate() {
            if inc {
                total -= log_softmax_at(l.row(r), t);
                count += 1;
            }
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                include,
                probs,
                count,
            },
            ng,
        )
    }

    /// Sum of equally shaped tensors, accumulated left to right.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for p in &parts[1..] {
            out.add_assign(self.value(*p));
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::Sum(parts.to_vec()), ng)
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Grads((0..self.params.len()).map(|_| None).collect());
        // Weight gradients of `x W` with `W` a parameter are collected and
        // computed with one stacked product once every use has been seen.
        let mut deferred: HashMap<usize, Vec<(Var, Tensor)>> = HashMap::new();
        // Transposed parameter matrices, so `g W'` runs as a plain product.
        let mut transposed: HashMap<usize, Tensor> = HashMap::new();

        for i in (0..=root.0).rev() {
            if let Some(uses) = deferred.remove(&i) {
                let w = self.value(Var(i));
                let rows: usize = uses.iter().map(|(_, g)| g.rows()).sum();
                let mut xs = Vec::with_capacity(rows * w.rows());
                let mut gs = Vec::with_capacity(rows * w.cols());
                for (x, g) in &uses {
                    xs.extend_from_slice(self.value(*x).data());
                    gs.extend_from_slice(g.data());
                }
                let xs = Tensor::from_vec(rows, w.rows(), xs);
                let gs = Tensor::from_vec(rows, w.cols(), gs);
                acc_gemm(&mut grads, Var(i), &xs, true, &gs, false);
            }
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Param(p) => out.0[p.index()] = Some(g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        if matches!(self.nodes[b.0].op, Op::Param(_)) && g.rows() <= SMALL_ROWS {
                            let bt = transposed.entry(b.0).or_insert_with(|| bv.transpose());
                            acc_gemm(&mut grads, *a, &g, false, bt, false);
                        } else {
                            acc_gemm(&mut grads, *a, &g, false, bv, true);
                        }
                    }
                    if self.ng(*b) {
                        if matches!(self.nodes[b.0].op, Op::Param(_)) {
                            deferred.entry(b.0).or_default().push((*a, g));
                        } else {
                            let av = self.value(*a);
                            acc_gemm(&mut grads, *b, av, true, &g, false);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let mut r = Tensor::zeros(1, g.cols());
                        for chunk in g.data().chunks(g.cols()) {
                            for (x, y) in r.data_mut().iter_mut().zip(chunk) {
                                *x += y;
                            }
                        }
                        acc(&mut grads, *row, r);
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, zip_map(&g, self.value(*b), |x, y| x * y));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, zip_map(&g, self.value(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    acc(&mut grads, *a, zip_map(&g, y, |d, y| d * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    acc(&mut grads, *a, zip_map(&g, y, |d, y| d * (1.0 - y * y)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        zip_map(&g, x, |d, x| if x > 0.0 { d } else { 0.0 }),
                    );
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        if self.ng(*p) {
                            let mut part = Tensor::zeros(g.rows(), cols);
                            for r in 0..g.rows() {
                                part.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + cols]);
                            }
                            acc(&mut grads, *p, part);
                        }
                        offset += cols;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let target = slot(&mut grads, *a, rows, cols);
                    for r in 0..rows {
                        for (x, y) in target.row_mut(r)[*start..*start + g.cols()]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *x += y;
                        }
                    }
                }
                Op::Gather(a, index) => {
                    let (rows, cols) = self.value(*a).shape();
                    let target = slot(&mut grads, *a, rows, cols);
                    for (r, &src) in index.iter().enumerate() {
                        for (x, y) in target.row_mut(src).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::Interleave(steps) => {
                    let s_len = steps.len();
                    for (s, v) in steps.iter().enumerate() {
                        if !self.ng(*v) {
                            continue;
                        }
                        let (b, h) = self.value(*v).shape();
                        let mut part = Tensor::zeros(b, h);
                        for r in 0..b {
                            part.row_mut(r).copy_from_slice(g.row(r * s_len + s));
                        }
                        acc(&mut grads, *v, part);
                    }
                }
                Op::Blend(new, old, mask) => {
                    let cols = g.cols();
                    if self.ng(*new) {
                        let mut gn = g.clone();
                        for (r, m) in mask.iter().enumerate() {
                            gn.row_mut(r).iter_mut().for_each(|x| *x *= m);
                        }
                        acc(&mut grads, *new, gn);
                    }
                    if self.ng(*old) {
                        let mut go = g;
                        for (r, m) in mask.iter().enumerate() {
                            go.data_mut()[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .for_each(|x| *x *= 1.0 - m);
                        }
                        acc(&mut grads, *old, go);
                    }
                }
                Op::MulConst(a, c) => {
                    acc(&mut grads, *a, zip_map(&g, c, |x, y| x * y));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (rows, d) = xhat.shape();
                    let gv = self.value(*gain).data();
                    if self.ng(*gain) || self.ng(*bias) {
                        let mut dg = Tensor::zeros(1, d);
                        let mut db = Tensor::zeros(1, d);
                        for r in 0..rows {
                            for c in 0..d {
                                dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                                db.data_mut()[c] += g.get(r, c);
                            }
                        }
                        if self.ng(*gain) {
                            acc(&mut grads, *gain, dg);
                        }
                        if self.ng(*bias) {
                            acc(&mut grads, *bias, db);
                        }
                    }
                    if self.ng(*x) {
                        let mut dx = Tensor::zeros(rows, d);
                        for r in 0..rows {
                            let dxhat: Vec<f64> = (0..d).map(|c| g.get(r, c) * gv[c]).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            let k = inv_std[r] / d as f64;
                            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                                *o = k * (d as f64 * dxhat[c] - sum - xhat.get(r, c) * dot);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    spec,
                    weights,
                } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, spec, weights, &g);
                    if self.ng(*q) {
                        acc(&mut grads, *q, dq);
                    }
                    if self.ng(*k) {
                        acc(&mut grads, *k, dk);
                    }
                    if self.ng(*v) {
                        acc(&mut grads, *v, dv);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    include,
                    probs,
                    count,
                } => {
                    let mut d = Tensor::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let scale = g.item() / *count as f64;
                        for (r, (&t, &inc)) in targets.iter().zip(include).enumerate() {
                            if inc {
                                let row = d.row_mut(r);
                                row.copy_from_slice(probs.row(r));
                                row[t] -= 1.0;
                                row.iter_mut().for_each(|x| *x *= scale);
                            }
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        if self.ng(*p) {
                            acc(&mut grads, *p, g.clone());
                        }
                    }
                }
            }
        }
        out
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttnSpec,
        weights: &[f64],
        g: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (b_n, t_n, s_n, h_n) = (spec.batch, spec.q_len, spec.k_len, spec.heads);
        let (dh, dvh) = (qt.cols() / h_n, vt.cols() / h_n);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(qt.rows(), qt.cols());
        let mut dk = Tensor::zeros(kt.rows(), kt.cols());
        let mut dv = Tensor::zeros(vt.rows(), vt.cols());
        let mut dw = vec![0.0; s_n];
        for b in 0..b_n {
            for h in 0..h_n {
                for t in 0..t_n {
                    let w = &weights[((b * h_n + h) * t_n + t) * s_n..][..s_n];
                    let grow = &g.row(b * t_n + t)[h * dvh..(h + 1) * dvh];
                    let mut wdw = 0.0;
                    for s in 0..s_n {
                        if w[s] == 0.0 {
                            dw[s] = 0.0;
                            continue;
                        }
                        let vrow = &vt.row(b * s_n + s)[h * dvh..(h + 1) * dvh];
                        dw[s] = grow.iter().zip(vrow).map(|(x, y)| x * y).sum();
                        wdw += w[s] * dw[s];
                        for (o, x) in dv.row_mut(b * s_n + s)[h * dvh..(h + 1) * dvh]
                            .iter_mut()
                            .zip(grow)
                        {
                            *o += w[s] * x;
                        }
                    }
                    let qrow = &qt.row(b * t_n + t)[h * dh..(h + 1) * dh];
                    for s in 0..s_n {
                        if w[s] == 0.0 {
                            continue;
                        }
                        let ds = w[s] * (dw[s] - wdw) * scale;
                        let krow = &kt.row(b * s_n + s)[h * dh..(h + 1) * dh];
                        for (o, x) in dq.row_mut(b * t_n + t)[h * dh..(h + 1) * dh]
                            .iter_mut()
                            .zip(krow)
                        {
                            *o += ds * x;
                        }
                        for (o, x) in dk.row_mut(b * s_n + s)[h * dh..(h + 1) * dh]
                            .iter_mut()
                            .zip(qrow)
                        {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn acc_gemm(grads: &mut [Option<Tensor>], v: Var, a: &Tensor, ta: bool, b: &Tensor, tb: bool) {
    match &mut grads[v.0] {
        Some(existing) => gemm_into(a, ta, b, tb, existing, 1.0),
        slot @ None => *slot = Some(a.matmul_t(ta, b, tb)),
    }
}

/// Row-wise softmax.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// log softmax(row)[index], computed with the log-sum-exp shift.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    row[index] - lse
}
