//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. `backward` walks
//! the record in reverse and returns the gradient of a scalar root with
//! respect to every node, including the parameters that were bound with
//! [`Tape::param`].

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    MulCols(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, pad: (usize, usize) },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    RowNormalize { x: Var, radius: f64, norms: Vec<f64> },
    Custom(Vec<(Var, Vec<f64>)>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Gradients of one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    /// Store each bound parameter's gradient on its tensor. Parameters that
    /// were bound but not reached get an explicit zero gradient.
    pub fn attach(&self, store: &mut ParamStore) -> Result<()> {
        for &(id, v) in &self.params {
            let g = match &self.nodes[v.0] {
                Some(g) => g.clone(),
                None => vec![0.0; store.get(id).len()],
            };
            store.get_mut(id).set_grad(g)?;
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<(ParamId, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("input shape {shape:?} vs {} values", data.len())));
        }
        Ok(self.push(shape, data, Op::Leaf))
    }

    /// Bind a stored parameter; binding the same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf);
        self.bound.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("{what} expects a 2-D operand, got {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n, false, false, false);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// x[B,N] + b[N] broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_bias")?;
        if self.value(b).len() != n {
            return Err(Error::shape(format!("bias of length {} for width {n}", self.value(b).len())));
        }
        let bias = self.value(b).to_vec();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddBias(x, b)))
    }

    /// x[B,N] * s[N] broadcast over rows.
    pub fn mul_cols(&mut self, x: Var, s: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "mul_cols")?;
        if self.value(s).len() != n {
            return Err(Error::shape(format!("column scale of length {} for width {n}", self.value(s).len())));
        }
        let sv = self.value(s).to_vec();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, f) in row.iter_mut().zip(&sv) {
                *o *= f;
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::MulCols(x, s)))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Concatenate 2-D operands with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat operands"));
        }
        let (rows, _) = self.dims2(parts[0], "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat")?;
            if r != rows {
                return Err(Error::shape(format!("concat rows {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(vec![rows, total], out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "slice_cols")?;
        if start + len > cols || len == 0 {
            return Err(Error::shape(format!("slice {start}+{len} of {cols} columns")));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(vec![rows, len], out, Op::SliceCols { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape(x))));
        }
        let v = self.value(x).to_vec();
        Ok(self.push(shape, v, Op::Reshape(x)))
    }

    /// Stride-1 cross-correlation. x: [B,C,H,W], w: [F,C,kh,kw], b: [F].
    /// `pad` zero-pads each spatial side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: (usize, usize)) -> Result<Var> {
        let (bs, c, h, wd) = dims4(self.shape(x), "conv2d input")?;
        let (f, c2, kh, kw) = dims4(self.shape(w), "conv2d kernel")?;
        if c != c2 || self.value(b).len() != f {
            return Err(Error::shape(format!(
                "conv2d channels: input {c}, kernel {c2}, bias {} for {f} filters",
                self.value(b).len()
            )));
        }
        let (oh, ow) = conv_out(h, wd, kh, kw, pad)?;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![0.0; bs * f * oh * ow];
        for n in 0..bs {
            for fi in 0..f {
                let o = &mut out[(n * f + fi) * oh * ow..(n * f + fi + 1) * oh * ow];
                o.iter_mut().for_each(|v| *v = bv[fi]);
                for ci in 0..c {
                    let xin = &xv[(n * c + ci) * h * wd..(n * c + ci + 1) * h * wd];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wt = wv[((fi * c + ci) * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let iy = oy + ky;
                                if iy < pad.0 || iy - pad.0 >= h {
                                    continue;
                                }
                                let iy = iy - pad.0;
                                for ox in 0..ow {
                                    let ix = ox + kx;
                                    if ix < pad.1 || ix - pad.1 >= wd {
                                        continue;
                                    }
                                    o[oy * ow + ox] += wt * xin[iy * wd + ix - pad.1];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![bs, f, oh, ow], out, Op::Conv2d { x, w, b, pad }))
    }

    /// Non-overlapping max pooling with window = stride = `window`.
    pub fn max_pool(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let (bs, c, h, w) = dims4(self.shape(x), "max_pool input")?;
        if window.0 == 0 || window.1 == 0 || window.0 > h || window.1 > w {
            return Err(Error::shape(format!("pool window {window:?} for map {h}x{w}")));
        }
        let (oh, ow) = (h / window.0, w / window.1);
        let xv = self.value(x);
        let mut out = vec![0.0; bs * c * oh * ow];
        let mut argmax = vec![0; out.len()];
        for plane in 0..bs * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base;
                    for dy in 0..window.0 {
                        for dx in 0..window.1 {
                            let i = base + (oy * window.0 + dy) * w + ox * window.1 + dx;
                            if xv[i] > best {
                                best = xv[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        Ok(self.push(vec![bs, c, oh, ow], out, Op::MaxPool { x, argmax }))
    }

    /// Multiply by a fixed mask (entries 0 or 1/(1-rate)).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("dropout mask length"));
        }
        let out = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Dropout { x, mask }))
    }

    /// Normalize each column of x[B,N] by its batch statistics, then apply
    /// gamma/beta. Returns the output node and the batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (bs, n) = self.dims2(x, "batch_norm")?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("batch_norm affine parameters"));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; n];
        for row in xv.chunks(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= bs as f64);
        let mut var = vec![0.0; n];
        for row in xv.chunks(n) {
            for j in 0..n {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= bs as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; bs * n];
        for (i, (row, hrow)) in xv.chunks(n).zip(xhat.chunks_mut(n)).enumerate() {
            let _ = i;
            for j in 0..n {
                hrow[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma);
        let be = self.value(beta);
        let mut out = vec![0.0; bs * n];
        for (orow, hrow) in out.chunks_mut(n).zip(xhat.chunks(n)) {
            for j in 0..n {
                orow[j] = g[j] * hrow[j] + be[j];
            }
        }
        let shape = vec![bs, n];
        let v = self.push(shape, out, Op::BatchNorm { x, gamma, beta, xhat, inv_std });
        Ok((v, mean, var))
    }

    /// Scale every row of x[B,N] onto the sphere of the given radius. An
    /// all-zero row maps to the uniform vector of that radius.
    pub fn row_normalize(&mut self, x: Var, radius: f64) -> Result<Var> {
        let (_, n) = self.dims2(x, "row_normalize")?;
        let mut out = self.value(x).to_vec();
        let mut norms = Vec::with_capacity(out.len() / n);
        for row in out.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                row.iter_mut().for_each(|v| *v *= radius / norm);
            } else {
                let u = radius / (n as f64).sqrt();
                row.iter_mut().for_each(|v| *v = u);
            }
            norms.push(norm);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::RowNormalize { x, radius, norms }))
    }

    /// Scalar node whose value and input gradients were computed externally.
    pub fn custom_scalar(&mut self, value: f64, inputs: Vec<(Var, Vec<f64>)>) -> Result<Var> {
        for (v, g) in &inputs {
            if g.len() != self.value(*v).len() {
                return Err(Error::shape("custom op gradient length"));
            }
        }
        Ok(self.push(vec![1], vec![value], Op::Custom(inputs)))
    }

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        if !self.nodes[root.0].value[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of node {i}")));
            }
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params: self.bound.clone() })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let ga = slot(grads, *a, m * k);
                gemm(g, val(*b), ga, m, n, k, false, true, true);
                let gb = slot(grads, *b, k * n);
                gemm(val(*a), g, gb, k, m, n, true, false, true);
            }
            Op::AddBias(x, b) => {
                let n = node.shape[1];
                accumulate(slot(grads, *x, g.len()), g);
                let gb = slot(grads, *b, n);
                for row in g.chunks(n) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::MulCols(x, s) => {
                let n = node.shape[1];
                let (xv, sv) = (val(*x).clone(), val(*s).clone());
                let gx = slot(grads, *x, g.len());
                for (orow, grow) in gx.chunks_mut(n).zip(g.chunks(n)) {
                    for j in 0..n {
                        orow[j] += grow[j] * sv[j];
                    }
                }
                let gs = slot(grads, *s, n);
                for (grow, xrow) in g.chunks(n).zip(xv.chunks(n)) {
                    for j in 0..n {
                        gs[j] += grow[j] * xrow[j];
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(slot(grads, *a, g.len()), g);
                accumulate(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                accumulate(slot(grads, *a, g.len()), g);
                let gb = slot(grads, *b, g.len());
                for (o, v) in gb.iter_mut().zip(g) {
                    *o -= v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).clone(), val(*b).clone());
                let ga = slot(grads, *a, g.len());
                for ((o, gv), y) in ga.iter_mut().zip(g).zip(&bv) {
                    *o += gv * y;
                }
                let gb = slot(grads, *b, g.len());
                for ((o, gv), x) in gb.iter_mut().zip(g).zip(&av) {
                    *o += gv * x;
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                for (o, gv) in ga.iter_mut().zip(g) {
                    *o += c * gv;
                }
            }
            Op::AddScalar(a) => accumulate(slot(grads, *a, g.len()), g),
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.len());
                for ((o, gv), y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for ((o, gv), y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += gv * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let x = val(*a).clone();
                let ga = slot(grads, *a, g.len());
                for ((o, gv), xv) in ga.iter_mut().zip(g).zip(&x) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, *a, g.len());
                for ((o, gv), y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += gv * y;
                }
            }
            Op::Square(a) => {
                let x = val(*a).clone();
                let ga = slot(grads, *a, g.len());
                for ((o, gv), xv) in ga.iter_mut().zip(g).zip(&x) {
                    *o += 2.0 * gv * xv;
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                slot(grads, *a, n).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let s = g[0] / n as f64;
                slot(grads, *a, n).iter_mut().for_each(|o| *o += s);
            }
            Op::Concat(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].shape[1];
                    let gp = slot(grads, *p, rows * w);
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + offset + c];
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let len = node.shape[1];
                let gx = slot(grads, *x, rows * cols);
                for r in 0..rows {
                    for c in 0..len {
                        gx[r * cols + start + c] += g[r * len + c];
                    }
                }
            }
            Op::Reshape(x) => accumulate(slot(grads, *x, g.len()), g),
            Op::Conv2d { x, w, b, pad } => self.conv_backward(node, g, *x, *w, *b, *pad, grads),
            Op::MaxPool { x, argmax } => {
                let n = val(*x).len();
                let gx = slot(grads, *x, n);
                for (gv, &i) in g.iter().zip(argmax) {
                    gx[i] += gv;
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, g.len());
                for ((o, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gv * m;
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (bs, n) = (node.shape[0], node.shape[1]);
                let gam = val(*gamma).clone();
                let mut sum_g = vec![0.0; n];
                let mut sum_gx = vec![0.0; n];
                for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                accumulate(slot(grads, *beta, n), &sum_g);
                accumulate(slot(grads, *gamma, n), &sum_gx);
                let gx = slot(grads, *x, bs * n);
                let bf = bs as f64;
                for ((orow, grow), hrow) in gx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        orow[j] += gam[j] * inv_std[j] / bf
                            * (bf * grow[j] - sum_g[j] - hrow[j] * sum_gx[j]);
                    }
                }
            }
            Op::RowNormalize { x, radius, norms } => {
                let n = node.shape[1];
                let xv = val(*x).clone();
                let gx = slot(grads, *x, xv.len());
                for (((orow, grow), xrow), &norm) in
                    gx.chunks_mut(n).zip(g.chunks(n)).zip(xv.chunks(n)).zip(norms)
                {
                    if !(norm > 0.0 && norm.is_finite()) {
                        continue;
                    }
                    let dot: f64 = grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / norm;
                    for j in 0..n {
                        orow[j] += radius / norm * (grow[j] - xrow[j] / norm * dot);
                    }
                }
            }
            Op::Custom(inputs) => {
                for (v, dg) in inputs {
                    let gv = slot(grads, *v, dg.len());
                    for (o, d) in gv.iter_mut().zip(dg) {
                        *o += g[0] * d;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        node: &Node,
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        pad: (usize, usize),
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xs = &self.nodes[x.0].shape;
        let (bs, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let ws = &self.nodes[w.0].shape;
        let (f, kh, kw) = (ws[0], ws[2], ws[3]);
        let (oh, ow) = (node.shape[2], node.shape[3]);
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;

        let gb = slot(grads, b, f);
        for n in 0..bs {
            for fi in 0..f {
                gb[fi] += g[(n * f + fi) * oh * ow..(n * f + fi + 1) * oh * ow].iter().sum::<f64>();
            }
        }
        let mut gw = vec![0.0; wv.len()];
        let mut gx = vec![0.0; xv.len()];
        for n in 0..bs {
            for fi in 0..f {
                let go = &g[(n * f + fi) * oh * ow..(n * f + fi + 1) * oh * ow];
                for ci in 0..c {
                    let xoff = (n * c + ci) * h * wd;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = ((fi * c + ci) * kh + ky) * kw + kx;
                            let wt = wv[widx];
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let iy = oy + ky;
                                if iy < pad.0 || iy - pad.0 >= h {
                                    continue;
                                }
                                let iy = iy - pad.0;
                                for ox in 0..ow {
                                    let ix = ox + kx;
                                    if ix < pad.1 || ix - pad.1 >= wd {
                                        continue;
                                    }
                                    let xi = xoff + iy * wd + ix - pad.1;
                                    let gv = go[oy * ow + ox];
                                    acc += gv * xv[xi];
                                    gx[xi] += gv * wt;
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        accumulate(slot(grads, w, gw.len()), &gw);
        accumulate(slot(grads, x, gx.len()), &gx);
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims4(s: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match s {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        _ => Err(Error::shape(format!("{what} must be 4-D, got {s:?}"))),
    }
}

pub(crate) fn conv_out(h: usize, w: usize, kh: usize, kw: usize, pad: (usize, usize)) -> Result<(usize, usize)> {
    let (ph, pw) = (h + 2 * pad.0, w + 2 * pad.1);
    if kh > ph || kw > pw {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than padded map {ph}x{pw}"
        )));
    }
    Ok((ph - kh + 1, pw - kw + 1))
}
