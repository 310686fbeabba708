//! Minimal dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and accumulates
//! gradients into every node that requires one. Graphs are cheap and meant
//! to be rebuilt per batch.

mod adam;
mod gradcheck;
mod kernels;
mod lstm;
mod selfcheck;

use crate::error::{Error, Result};
use kernels::{conv1d_backward, conv1d_forward, gemm, ConvDims, MatRef};
use lstm::{lstm_backward, lstm_forward, LstmCache, LstmDims, LstmGrads};

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use selfcheck::{primitive_checks, PRIMITIVE_TOLERANCE};

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) || n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Shape(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Elu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` either matches `a` or is broadcast along the last axis.
    Add(Var, Var),
    Mul(Var, Var),
    Unary(Unary, Var),
    Custom(Var, fn(f64, f64) -> f64),
    Conv1d { x: Var, w: Var, b: Var, batch: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Lstm { x: Var, w: Var, u: Var, b: Var, batch: usize, cache: LstmCache },
}

/// Tape of operations. Each node owns its value and, after
/// [`Graph::backward`], its gradient when `requires_grad` is set.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    ops: Vec<Op>,
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, requires: bool, op: Op) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Trainable input; receives a gradient on backward.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn req(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            0.0,
            &mut out,
        );
        let r = self.req(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, r, Op::MatMul(a, b)))
    }

    fn broadcast_check(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb || (sb.len() == 1 && sa.last() == Some(&sb[0])) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what} {sa:?} with {sb:?}")))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check(a, b, "add")?;
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for row in out.data.chunks_mut(bv.len()) {
            row.iter_mut().zip(bv).for_each(|(o, x)| *o += x);
        }
        let r = self.req(&[a, b]);
        Ok(self.push(out, r, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check(a, b, "mul")?;
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for row in out.data.chunks_mut(bv.len()) {
            row.iter_mut().zip(bv).for_each(|(o, x)| *o *= x);
        }
        let r = self.req(&[a, b]);
        Ok(self.push(out, r, Op::Mul(a, b)))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let f: fn(f64) -> f64 = match kind {
            Unary::Elu => |v| if v > 0.0 { v } else { v.exp_m1() },
            Unary::Sigmoid => |v| 1.0 / (1.0 + (-v).exp()),
            Unary::Tanh => f64::tanh,
        };
        out.data.iter_mut().for_each(|v| *v = f(*v));
        let r = self.req(&[x]);
        self.push(out, r, Op::Unary(kind, x))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(Unary::Elu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    /// Element-wise map with a caller-supplied derivative `df(x, y)`.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        let r = self.req(&[x]);
        self.push(out, r, Op::Custom(x, df))
    }

    /// Valid, stride-1 cross-correlation. `x` is `[C_in, L]` or
    /// `[B, C_in, L]`, `w` is `[C_out, C_in, K]`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let dims = self.conv_dims(x, w, b)?;
        let batched = self.value(x).shape().len() == 3;
        let lo = dims.out_len();
        let mut out = vec![0.0; dims.batch * dims.c_out * lo];
        conv1d_forward(
            &dims,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let shape = if batched {
            vec![dims.batch, dims.c_out, lo]
        } else {
            vec![dims.c_out, lo]
        };
        let r = self.req(&[x, w, b]);
        Ok(self.push(
            Tensor { shape, data: out },
            r,
            Op::Conv1d {
                x,
                w,
                b,
                batch: dims.batch,
            },
        ))
    }

    fn conv_dims(&self, x: Var, w: Var, b: Var) -> Result<ConvDims> {
        let (batch, c_in, len) = match self.value(x).shape()[..] {
            [c, l] => (1, c, l),
            [n, c, l] => (n, c, l),
            ref s => return Err(Error::Shape(format!("conv1d input shape {s:?}"))),
        };
        let (c_out, wc, k) = match self.value(w).shape()[..] {
            [o, c, k] => (o, c, k),
            ref s => return Err(Error::Shape(format!("conv1d kernel shape {s:?}"))),
        };
        if wc != c_in || self.value(b).shape() != [c_out] {
            return Err(Error::Shape(format!(
                "conv1d channels: input {c_in}, kernel {:?}, bias {:?}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        if len < k {
            return Err(Error::Shape(format!("conv1d length {len} shorter than kernel {k}")));
        }
        Ok(ConvDims {
            batch,
            c_in,
            len,
            c_out,
            k,
        })
    }

    /// Max over windows along the last axis; the trailing remainder is
    /// dropped. Ties route the gradient to the first maximal index.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let len = *shape.last().unwrap();
        if window == 0 || stride == 0 || len < window || shape.len() < 2 {
            return Err(Error::Shape(format!(
                "maxpool window {window} stride {stride} over shape {shape:?}"
            )));
        }
        let lo = (len - window) / stride + 1;
        let rows = self.value(x).len() / len;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * lo);
        let mut argmax = Vec::with_capacity(rows * lo);
        for r in 0..rows {
            for t in 0..lo {
                let start = r * len + t * stride;
                let mut best = start;
                for i in start + 1..start + window {
                    if xv[i] > xv[best] {
                        best = i;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = lo;
        let r = self.req(&[x]);
        Ok(self.push(Tensor { shape: out_shape, data: out }, r, Op::MaxPool { x, argmax }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!("columns {start}..{} of {n}", start + len)));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for row in xv.chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let r = self.req(&[x]);
        Ok(self.push(Tensor { shape: vec![m, len], data: out }, r, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if len == 0 || start + len > m {
            return Err(Error::Shape(format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let r = self.req(&[x]);
        Ok(self.push(Tensor { shape: vec![len, n], data: out }, r, Op::SliceRows { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut m = None;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if *m.get_or_insert(pm) != pm {
                return Err(Error::Shape("concat_cols row counts differ".into()));
            }
            total += pn;
        }
        let m = m.ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let t = self.value(p);
                let n = t.shape()[1];
                out.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
            }
        }
        let r = self.req(parts);
        Ok(self.push(Tensor { shape: vec![m, total], data: out }, r, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut n = None;
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if *n.get_or_insert(pn) != pn {
                return Err(Error::Shape("concat_rows column counts differ".into()));
            }
            rows += pm;
        }
        let n = n.ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let r = self.req(parts);
        Ok(self.push(Tensor { shape: vec![rows, n], data: out }, r, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        let r = self.req(&[x]);
        Ok(self.push(t, r, Op::Reshape(x)))
    }

    /// Sum of all elements as a 1-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let r = self.req(&[x]);
        self.push(Tensor::scalar(s), r, Op::Sum(x))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    /// Returns the loss node and the row-major probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Vec<f64>)> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} out of domain for {c} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            loss += lse - row[label];
        }
        loss /= b as f64;
        let r = self.req(&[logits]);
        let out = self.push(
            Tensor::scalar(loss),
            r,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs: probs.clone(),
            },
        );
        Ok((out, probs))
    }

    /// One LSTM layer over a time-major sequence `x` of shape `[T*B, in]`
    /// with zero initial state. `w` is `[in, 4H]`, `u` is `[H, 4H]`, `b` is
    /// `[4H]`, gate blocks ordered i, f, g, o. Returns every hidden state as
    /// `[T*B, H]`.
    pub fn lstm(&mut self, x: Var, w: Var, u: Var, b: Var, batch: usize) -> Result<Var> {
        let (rows, input) = self.value(x).dims2()?;
        let (wi, g4) = self.value(w).dims2()?;
        let (uh, ug) = self.value(u).dims2()?;
        let hidden = uh;
        if batch == 0
            || rows % batch != 0
            || wi != input
            || g4 != 4 * hidden
            || ug != g4
            || self.value(b).shape() != [g4]
        {
            return Err(Error::Shape(format!(
                "lstm: x {:?}, w {:?}, u {:?}, b {:?}, batch {batch}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(u).shape(),
                self.value(b).shape()
            )));
        }
        let dims = LstmDims {
            steps: rows / batch,
            batch,
            input,
            hidden,
        };
        let (hs, cache) = lstm_forward(
            &dims,
            self.value(x).data(),
            self.value(w).data(),
            self.value(u).data(),
            self.value(b).data(),
        );
        let r = self.req(&[x, w, u, b]);
        Ok(self.push(
            Tensor {
                shape: vec![rows, hidden],
                data: hs,
            },
            r,
            Op::Lstm {
                x,
                w,
                u,
                b,
                batch,
                cache,
            },
        ))
    }

    /// Reverse pass from a 1-element node. Gradients accumulate, so call it
    /// once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        *grad_slot(&mut self.grads, loss, 1) = vec![1.0];
        let values = &self.values;
        let grads = &mut self.grads;
        let requires = &self.requires;
        for i in (0..=loss.0).rev() {
            if !requires[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let need = |v: &Var| requires[v.0];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (values[a.0].shape()[0], values[a.0].shape()[1]);
                    let n = values[b.0].shape()[1];
                    let dc = MatRef::new(&g, m, n);
                    if need(a) {
                        let bv = MatRef::new(values[b.0].data(), k, n);
                        gemm(dc, bv.t(), 1.0, grad_slot(grads, *a, m * k));
                    }
                    if need(b) {
                        let av = MatRef::new(values[a.0].data(), m, k);
                        gemm(av.t(), dc, 1.0, grad_slot(grads, *b, k * n));
                    }
                }
                Op::Add(a, b) => {
                    if need(a) {
                        let ga = grad_slot(grads, *a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if need(b) {
                        let nb = values[b.0].len();
                        let gb = grad_slot(grads, *b, nb);
                        for row in g.chunks(nb) {
                            gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (values[a.0].data(), values[b.0].data());
                    let nb = bv.len();
                    if need(a) {
                        let ga = grad_slot(grads, *a, g.len());
                        for (gr, dr) in ga.chunks_mut(nb).zip(g.chunks(nb)) {
                            for ((x, d), bb) in gr.iter_mut().zip(dr).zip(bv) {
                                *x += d * bb;
                            }
                        }
                    }
                    if need(b) {
                        let gb = grad_slot(grads, *b, nb);
                        for (dr, ar) in g.chunks(nb).zip(av.chunks(nb)) {
                            for ((x, d), aa) in gb.iter_mut().zip(dr).zip(ar) {
                                *x += d * aa;
                            }
                        }
                    }
                }
                Op::Unary(kind, x) => {
                    let y = values[i].data();
                    let gx = grad_slot(grads, *x, g.len());
                    for ((acc, &d), &yv) in gx.iter_mut().zip(&g).zip(y) {
                        let dy = match kind {
                            Unary::Elu => {
                                if yv > 0.0 {
                                    1.0
                                } else {
                                    yv + 1.0
                                }
                            }
                            Unary::Sigmoid => yv * (1.0 - yv),
                            Unary::Tanh => 1.0 - yv * yv,
                        };
                        *acc += d * dy;
                    }
                }
                Op::Custom(x, df) => {
                    let (xv, y) = (values[x.0].data(), values[i].data());
                    let gx = grad_slot(grads, *x, g.len());
                    for (((acc, &d), &xx), &yy) in gx.iter_mut().zip(&g).zip(xv).zip(y) {
                        *acc += d * df(xx, yy);
                    }
                }
                Op::Conv1d { x, w, b, batch } => {
                    let xs = values[x.0].shape();
                    let ws = values[w.0].shape();
                    let dims = ConvDims {
                        batch: *batch,
                        c_in: xs[xs.len() - 2],
                        len: xs[xs.len() - 1],
                        c_out: ws[0],
                        k: ws[2],
                    };
                    let (nx, nw, nb) = (values[x.0].len(), values[w.0].len(), values[b.0].len());
                    let mut dx = need(x).then(|| grads[x.0].take().unwrap_or_else(|| vec![0.0; nx]));
                    let mut dw = need(w).then(|| grads[w.0].take().unwrap_or_else(|| vec![0.0; nw]));
                    let mut db = need(b).then(|| grads[b.0].take().unwrap_or_else(|| vec![0.0; nb]));
                    conv1d_backward(
                        &dims,
                        values[x.0].data(),
                        values[w.0].data(),
                        &g,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    for (v, d) in [(x, dx), (w, dw), (b, db)] {
                        if d.is_some() {
                            grads[v.0] = d;
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let gx = grad_slot(grads, *x, values[x.0].len());
                    for (&src, &d) in argmax.iter().zip(&g) {
                        gx[src] += d;
                    }
                }
                Op::SliceCols { x, start } => {
                    let n = values[x.0].shape()[1];
                    let len = values[i].shape()[1];
                    let gx = grad_slot(grads, *x, values[x.0].len());
                    for (row, dr) in gx.chunks_mut(n).zip(g.chunks(len)) {
                        row[*start..start + len].iter_mut().zip(dr).for_each(|(a, b)| *a += b);
                    }
                }
                Op::SliceRows { x, start } => {
                    let n = values[x.0].shape()[1];
                    let gx = grad_slot(grads, *x, values[x.0].len());
                    gx[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::ConcatCols(parts) => {
                    let total = values[i].shape()[1];
                    let mut off = 0;
                    for p in parts {
                        let n = values[p.0].shape()[1];
                        if need(p) {
                            let gp = grad_slot(grads, *p, values[p.0].len());
                            for (row, dr) in gp.chunks_mut(n).zip(g.chunks(total)) {
                                row.iter_mut().zip(&dr[off..off + n]).for_each(|(a, b)| *a += b);
                            }
                        }
                        off += n;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = values[p.0].len();
                        if need(p) {
                            let gp = grad_slot(grads, *p, len);
                            gp.iter_mut().zip(&g[off..off + len]).for_each(|(a, b)| *a += b);
                        }
                        off += len;
                    }
                }
                Op::Reshape(x) => {
                    let gx = grad_slot(grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Sum(x) => {
                    let gx = grad_slot(grads, *x, values[x.0].len());
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let c = values[logits.0].shape()[1];
                    let scale = g[0] / labels.len() as f64;
                    let gl = grad_slot(grads, *logits, probs.len());
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
                Op::Lstm { x, w, u, b, batch, cache } => {
                    let (rows, input) = (values[x.0].shape()[0], values[x.0].shape()[1]);
                    let hidden = values[u.0].shape()[0];
                    let dims = LstmDims {
                        steps: rows / batch,
                        batch: *batch,
                        input,
                        hidden,
                    };
                    let mut take = |v: &Var| {
                        let n = values[v.0].len();
                        need(v).then(|| grads[v.0].take().unwrap_or_else(|| vec![0.0; n]))
                    };
                    let (mut dx, mut dw, mut du, mut db) = (take(x), take(w), take(u), take(b));
                    lstm_backward(
                        &dims,
                        values[x.0].data(),
                        values[w.0].data(),
                        values[u.0].data(),
                        values[i].data(),
                        cache,
                        &g,
                        LstmGrads {
                            dx: dx.as_deref_mut(),
                            dw: dw.as_deref_mut(),
                            du: du.as_deref_mut(),
                            db: db.as_deref_mut(),
                        },
                    );
                    for (v, d) in [(x, dx), (w, dw), (u, du), (b, db)] {
                        if d.is_some() {
                            grads[v.0] = d;
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a `[B, C]` matrix, max-subtracted.
pub fn softmax_rows(logits: &Tensor) -> Result<Vec<f64>> {
    let (_, c) = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|v| (v - lse).exp()));
    }
    Ok(out)
}
