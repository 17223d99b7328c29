//! Reverse-mode tape over a fixed set of matrix operations.
//!
//! A [`Graph`] records one forward pass. Every operation appends a node whose
//! value is computed eagerly; [`Graph::backward`] walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because a node
//! can only reference nodes created before it.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const LOGVAR_MIN: f64 = -10.0;
const LOGVAR_MAX: f64 = 10.0;

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow { x: Var, row: Var },
    Scale(Var, T),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    SelectRows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, smoothing: T, probs: Vec<T> },
    GaussianNll { params: Var, targets: Vec<T>, clamped: Vec<bool> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(Var, ParamId)>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::invalid(format!("variable {} is not part of this graph", v.0)))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable parameter. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.push((v, id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        Ok(self.node(v)?.value.dims2())
    }

    /// `a · b` for `a: [m,k]`, `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::invalid(format!(
                "matmul inner dimensions differ: [{m},{k}] x [{br},{bc}]{}",
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_rows(m, n, out), Op::MatMul { a, b, trans_b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        if va.shape() != vb.shape() {
            return Err(Error::invalid(format!(
                "add shape mismatch {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Adds a `[n]` (or `[1,n]`) row vector to every row of `x: [m,n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let r = &self.node(row)?.value;
        if r.len() != n {
            return Err(Error::invalid(format!("row of width {} added to [{m},{n}]", r.len())));
        }
        let xv = self.value(x).data();
        let rv = self.value(row).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(xv[i * n..(i + 1) * n].iter().zip(rv).map(|(&a, &b)| a + b));
        }
        let ng = self.needs(&[x, row]);
        Ok(self.push(Tensor::from_rows(m, n, out), Op::AddRow { x, row }, ng))
    }

    pub fn scale(&mut self, x: Var, f: T) -> Result<Var> {
        let v = &self.node(x)?.value;
        let data = v.data().iter().map(|&a| a * f).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Scale(x, f), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let v = &self.node(x)?.value;
        let data = v.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, op, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| if a > T::zero() { a } else { T::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| a.tanh(), Op::Tanh(x))
    }

    /// Row-wise layer normalization with affine parameters `gamma`, `beta` of width n.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if self.node(gamma)?.value.len() != n || self.node(beta)?.value.len() != n {
            return Err(Error::invalid("layer norm affine width differs from input width"));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let eps = T::of(LN_EPS);
        let nf = T::of(n as f64);
        let mut xhat = Vec::with_capacity(m * n);
        let mut rstd = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let r = &xv[i * n..(i + 1) * n];
            let mean = r.iter().fold(T::zero(), |s, &a| s + a) / nf;
            let var = r.iter().fold(T::zero(), |s, &a| s + (a - mean) * (a - mean)) / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..n {
                let h = (r[j] - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_rows(m, n, out),
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            ng,
        ))
    }

    /// Row-wise softmax. `allowed[i*n + j] == false` forces a zero weight;
    /// a row with no allowed entry is all zeros.
    pub fn softmax(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if let Some(a) = allowed {
            if a.len() != m * n {
                return Err(Error::invalid(format!(
                    "mask has {} entries for a [{m},{n}] score matrix",
                    a.len()
                )));
            }
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let ok = |j: usize| allowed.is_none_or(|a| a[i * n + j]);
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if ok(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            let mut sum = T::zero();
            for j in 0..n {
                if ok(j) {
                    let e = (row[j] - max).exp();
                    o[j] = e;
                    sum += e;
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::from_rows(m, n, out), Op::Softmax(x), ng))
    }

    /// Rows of `table: [V,d]` picked by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table)?;
        if ids.is_empty() {
            return Err(Error::invalid("gather with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid(format!("embedding id {bad} out of range for {v} rows")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let ng = self.needs(&[table]);
        Ok(self.push(
            Tensor::from_rows(ids.len(), d, out),
            Op::Gather { table, ids: ids.to_vec() },
            ng,
        ))
    }

    /// Rows of an activation picked by index (duplicates allowed).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if idx.is_empty() {
            return Err(Error::invalid("select_rows with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(format!("row {bad} out of range for {m} rows")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&xv[i * n..(i + 1) * n]);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_rows(idx.len(), n, out),
            Op::SelectRows { x, idx: idx.to_vec() },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows of nothing"));
        }
        let n = self.dims(parts[0])?.1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != n {
                return Err(Error::invalid(format!("concat_rows width {c} vs {n}")));
            }
            out.extend_from_slice(self.value(p).data());
            m += r;
        }
        let ng = self.needs(parts);
        Ok(self.push(Tensor::from_rows(m, n, out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!("columns {start}..{} of width {n}", start + len)));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::from_rows(m, len, out), Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of nothing"));
        }
        let m = self.dims(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(Error::invalid(format!("concat_cols height {r} vs {m}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(Tensor::from_rows(m, n, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Mean softmax cross-entropy of `logits: [n,V]` against `targets`, with
    /// optional label smoothing (mass `smoothing` spread uniformly over V).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let (n, v) = self.dims(logits)?;
        if targets.len() != n {
            return Err(Error::invalid(format!("{} targets for {n} logit rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::invalid(format!("target {bad} out of range for {v} classes")));
        }
        let lv = self.value(logits).data();
        let eps = T::of(smoothing);
        let off = eps / T::of(v as f64);
        let mut probs = Vec::with_capacity(n * v);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &lv[i * v..(i + 1) * v];
            let max = row.iter().fold(T::neg_infinity(), |m, &a| if a > m { a } else { m });
            let sum = row.iter().fold(T::zero(), |s, &a| s + (a - max).exp());
            let lse = max + sum.ln();
            let mut loss = (T::one() - eps) * (lse - row[t]);
            if smoothing > 0.0 {
                loss += off * row.iter().fold(T::zero(), |s, &a| s + (lse - a));
            }
            total += loss;
            probs.extend(row.iter().map(|&a| (a - lse).exp()));
        }
        let value = total / T::of(n as f64);
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing: eps, probs },
            ng,
        ))
    }

    /// Mean Gaussian negative log-likelihood. `params: [n,2]` holds the mean
    /// and the log-variance (clamped to [-10, 10]) of each row.
    pub fn gaussian_nll(&mut self, params: Var, targets: &[T]) -> Result<Var> {
        let (n, w) = self.dims(params)?;
        if w != 2 || targets.len() != n {
            return Err(Error::invalid(format!(
                "gaussian head [{n},{w}] with {} targets",
                targets.len()
            )));
        }
        let pv = self.value(params).data();
        let half_ln_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        let half = T::of(0.5);
        let mut clamped = Vec::with_capacity(n);
        let mut total = T::zero();
        for i in 0..n {
            let (mu, raw) = (pv[2 * i], pv[2 * i + 1]);
            let lv = clamp_logvar(raw);
            clamped.push(lv != raw);
            let d = targets[i] - mu;
            total += half_ln_2pi + half * lv + half * d * d * (-lv).exp();
        }
        let value = total / T::of(n as f64);
        let ng = self.needs(&[params]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::GaussianNll { params, targets: targets.to_vec(), clamped },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.data().iter().fold(T::zero(), |s, &a| s + a);
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), ng))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used in
    /// this graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid("backward called before any forward pass was recorded"))?;
        if root.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Gradients::default();
        for &(v, id) in &self.params {
            if v.0 <= loss.0 {
                if let Some(g) = grads[v.0].take() {
                    out.insert(id, g);
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).dims2();
                let (_, n) = node.value.dims2();
                let bv = self.value(*b).data();
                if wants(*a) {
                    // dA = dC · op(B)ᵀ
                    let ga = acc(grads, *a, m * k);
                    T::gemm(m, n, k, g, false, bv, !*trans_b, ga, true);
                }
                if wants(*b) {
                    let av = self.value(*a).data();
                    let gb = acc(grads, *b, k * n);
                    if *trans_b {
                        // B is [n,k]: dB = dCᵀ · A
                        T::gemm(n, m, k, g, true, av, false, gb, true);
                    } else {
                        // dB = Aᵀ · dC
                        T::gemm(k, m, n, av, true, g, false, gb, true);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddRow { x, row } => {
                let (_, n) = node.value.dims2();
                if wants(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
                if wants(*row) {
                    let gr = acc(grads, *row, n);
                    for r in g.chunks(n) {
                        add_into(gr, r);
                    }
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    let gx = acc(grads, *x, g.len());
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s * *f;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, g.len());
                for ((d, &s), &a) in gx.iter_mut().zip(g).zip(xv) {
                    *d += s * gelu_grad(a);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, g.len());
                for ((d, &s), &a) in gx.iter_mut().zip(g).zip(xv) {
                    if a > T::zero() {
                        *d += s;
                    }
                }
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                let gx = acc(grads, *x, g.len());
                for ((d, &s), &y) in gx.iter_mut().zip(g).zip(yv) {
                    *d += s * (T::one() - y * y);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (m, n) = node.value.dims2();
                let gv = self.value(*gamma).data();
                if wants(*gamma) {
                    let gg = acc(grads, *gamma, n);
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                }
                if wants(*beta) {
                    let gb = acc(grads, *beta, n);
                    for r in g.chunks(n) {
                        add_into(gb, r);
                    }
                }
                if wants(*x) {
                    let nf = T::of(n as f64);
                    let gx = acc(grads, *x, m * n);
                    let mut dh = vec![T::zero(); n];
                    for i in 0..m {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..n {
                            dh[j] = g[i * n + j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * xhat[i * n + j];
                        }
                        mean_dh /= nf;
                        mean_dh_h /= nf;
                        for j in 0..n {
                            gx[i * n + j] +=
                                rstd[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let (m, n) = node.value.dims2();
                let y = node.value.data();
                let gx = acc(grads, *x, m * n);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for j in 0..n {
                        gx[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let (v, d) = self.value(*table).dims2();
                let gt = acc(grads, *table, v * d);
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::SelectRows { x, idx } => {
                let (m, n) = self.value(*x).dims2();
                let gx = acc(grads, *x, m * n);
                for (r, &i) in idx.iter().enumerate() {
                    add_into(&mut gx[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if wants(p) {
                        add_into(acc(grads, p, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2();
                let (_, w) = node.value.dims2();
                let gx = acc(grads, *x, m * n);
                for i in 0..m {
                    add_into(&mut gx[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2();
                let mut off = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2();
                    if wants(p) {
                        let gp = acc(grads, p, m * w);
                        for i in 0..m {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * n + off..i * n + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::CrossEntropy { logits, targets, smoothing, probs } => {
                let (n, v) = self.value(*logits).dims2();
                let scale = g[0] / T::of(n as f64);
                let off = *smoothing / T::of(v as f64);
                let gl = acc(grads, *logits, n * v);
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..v {
                        let mut q = off;
                        if j == t {
                            q += T::one() - *smoothing;
                        }
                        gl[i * v + j] += scale * (probs[i * v + j] - q);
                    }
                }
            }
            Op::GaussianNll { params, targets, clamped } => {
                let pv = self.value(*params).data();
                let n = targets.len();
                let scale = g[0] / T::of(n as f64);
                let half = T::of(0.5);
                let gp = acc(grads, *params, 2 * n);
                for i in 0..n {
                    let mu = pv[2 * i];
                    let lv = clamp_logvar(pv[2 * i + 1]);
                    let inv = (-lv).exp();
                    let d = targets[i] - mu;
                    gp[2 * i] += scale * (-d * inv);
                    if !clamped[i] {
                        gp[2 * i + 1] += scale * (half - half * d * d * inv);
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let gx = acc(grads, *x, len);
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn clamp_logvar<T: Scalar>(raw: T) -> T {
    let (lo, hi) = (T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
    if raw < lo {
        lo
    } else if raw > hi {
        hi
    } else {
        raw
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}
