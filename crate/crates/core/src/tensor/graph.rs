//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; node indices are
//! therefore a valid topological order and `backward` simply walks the tape in
//! reverse. All ops work on rank-2 tensors (`[rows, cols]`); scalars are `[1, 1]`.

use super::gemm::gemm;
use super::param::{ParamId, ParamStore};
use super::{Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        inputs: Vec<Var>,
        axis: Axis,
    },
    Slice {
        input: Var,
        axis: Axis,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Softmax {
        input: Var,
        axis: Axis,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    MeanPool {
        input: Var,
        axis: Axis,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Square(Var),
    SmoothL1 {
        pred: Var,
        target: Var,
        beta: f64,
    },
    Chamfer {
        pred: Var,
        target: Var,
        points_pred: usize,
        points_target: usize,
        squared: bool,
        nn_pred: Vec<usize>,
        nn_target: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node. Interior nodes return `None`.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A single computation graph instance. Not `Sync`-shared; build one per thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Brings a parameter onto the tape; its gradient can later be pushed back
    /// with [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.tensor(id);
        let value = Tensor::from_vec(t.shape(), t.values().to_vec()).expect("parameter shape");
        self.push(value, Op::Param(id), true)
    }

    /// Pairs of (parameter, node) for every parameter leaf on the tape.
    pub fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims(ta);
        let (k2, n) = dims(tb);
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, ta.values(), false, tb.values(), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum. `b` may also be a `[1, cols]` row that is broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, ca) = dims(ta);
        let (rb, cb) = dims(tb);
        if ra == rb && ca == cb {
            let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(Tensor::from_vec(&[ra, ca], out)?, Op::Add(a, b), rg));
        }
        if rb == 1 && cb == ca {
            let row = tb.values();
            let mut out = ta.values().to_vec();
            for chunk in out.chunks_mut(ca) {
                for (o, r) in chunk.iter_mut().zip(row) {
                    *o += r;
                }
            }
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(Tensor::from_vec(&[ra, ca], out)?, Op::AddRow(a, b), rg));
        }
        Err(shape_err("add", ta, tb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(shape_err("sub", ta, tb));
        }
        let (r, c) = dims(ta);
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[r, c], out)?, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(shape_err("mul", ta, tb));
        }
        let (r, c) = dims(ta);
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[r, c], out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let out: Vec<f64> = ta.values().iter().map(|x| x * k).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[r, c], out).expect("scale shape"), Op::Scale(a, k), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or(TensorError::Empty("concat"))?;
        let (r0, c0) = dims(self.value(*first));
        let mut out;
        let shape;
        match axis {
            Axis::Rows => {
                let mut rows = 0;
                out = Vec::new();
                for &v in inputs {
                    let t = self.value(v);
                    if t.cols() != c0 {
                        return Err(shape_err("concat", self.value(*first), t));
                    }
                    rows += t.rows();
                    out.extend_from_slice(t.values());
                }
                shape = [rows, c0];
            }
            Axis::Cols => {
                let mut cols = 0;
                for &v in inputs {
                    let t = self.value(v);
                    if t.rows() != r0 {
                        return Err(shape_err("concat", self.value(*first), t));
                    }
                    cols += t.cols();
                }
                out = vec![0.0; r0 * cols];
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let c = t.cols();
                    for r in 0..r0 {
                        out[r * cols + offset..r * cols + offset + c].copy_from_slice(t.row(r));
                    }
                    offset += c;
                }
                shape = [r0, cols];
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let limit = if axis == Axis::Rows { r } else { c };
        if start > end || end > limit {
            return Err(TensorError::OutOfRange { op: "slice", shape: ta.shape().to_vec(), index: end });
        }
        let (shape, out) = match axis {
            Axis::Rows => ([end - start, c], ta.values()[start * c..end * c].to_vec()),
            Axis::Cols => {
                let w = end - start;
                let mut out = Vec::with_capacity(r * w);
                for row in 0..r {
                    out.extend_from_slice(&ta.row(row)[start..end]);
                }
                ([r, w], out)
            }
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let v = ta.values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[c, r], out).expect("transpose"), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let mut out = ta.values().to_vec();
        let (outer, inner, stride_o, stride_i) = match axis {
            Axis::Cols => (r, c, c, 1),
            Axis::Rows => (c, r, 1, c),
        };
        for o in 0..outer {
            let base = o * stride_o;
            let mut mx = f64::NEG_INFINITY;
            for i in 0..inner {
                mx = mx.max(out[base + i * stride_i]);
            }
            let mut total = 0.0;
            for i in 0..inner {
                let e = (out[base + i * stride_i] - mx).exp();
                out[base + i * stride_i] = e;
                total += e;
            }
            for i in 0..inner {
                out[base + i * stride_i] /= total;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[r, c], out).expect("softmax"), Op::Softmax { input: a, axis }, rg)
    }

    /// Normalizes each row, then applies `gamma` and `beta` (both `[1, cols]`).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if dims(tg) != (1, c) || dims(tb) != (1, c) {
            return Err(shape_err("layer_norm", ta, tg));
        }
        let g = tg.values();
        let b = tb.values();
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for row in 0..r {
            let x = ta.row(row);
            let mean = x.iter().sum::<f64>() / c as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[row] = rs;
            for j in 0..c {
                let h = (x[j] - mean) * rs;
                xhat[row * c + j] = h;
                out[row * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(a) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::from_vec(&[r, c], out)?, Op::LayerNorm { input: a, gamma, beta, xhat, rstd }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let out: Vec<f64> =
            ta.values().iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[r, c], out).expect("gelu"), Op::Gelu(a), rg)
    }

    /// `x · w + b` with `w: [in, out]` and `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (m, k) = dims(tx);
        let (k2, n) = dims(tw);
        if k != k2 {
            return Err(shape_err("linear", tx, tw));
        }
        if dims(tb) != (1, n) {
            return Err(shape_err("linear(bias)", tw, tb));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(tb.values());
        }
        gemm(m, k, n, 1.0, tx.values(), false, tw.values(), false, 1.0, &mut out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::Linear { x, w, b }, rg))
    }

    /// Mean along `axis`: `Rows` gives `[1, cols]`, `Cols` gives `[rows, 1]`.
    pub fn mean_pool(&mut self, a: Var, axis: Axis) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        if r == 0 || c == 0 {
            return Err(TensorError::Empty("mean_pool"));
        }
        let (shape, out) = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; c];
                for row in 0..r {
                    for (s, v) in acc.iter_mut().zip(ta.row(row)) {
                        *s += v;
                    }
                }
                acc.iter_mut().for_each(|s| *s /= r as f64);
                ([1, c], acc)
            }
            Axis::Cols => ([r, 1], (0..r).map(|row| ta.row(row).iter().sum::<f64>() / c as f64).collect()),
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::MeanPool { input: a, axis }, rg))
    }

    /// Max along `axis`; ties resolve to the first index.
    pub fn max_pool(&mut self, a: Var, axis: Axis) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        if r == 0 || c == 0 {
            return Err(TensorError::Empty("max_pool"));
        }
        let v = ta.values();
        let (shape, out, argmax) = match axis {
            Axis::Rows => {
                let mut out = v[..c].to_vec();
                let mut arg: Vec<usize> = (0..c).collect();
                for row in 1..r {
                    for j in 0..c {
                        let x = v[row * c + j];
                        if x > out[j] {
                            out[j] = x;
                            arg[j] = row * c + j;
                        }
                    }
                }
                ([1, c], out, arg)
            }
            Axis::Cols => {
                let mut out = Vec::with_capacity(r);
                let mut arg = Vec::with_capacity(r);
                for row in 0..r {
                    let mut best = row * c;
                    for j in 1..c {
                        if v[row * c + j] > v[best] {
                            best = row * c + j;
                        }
                    }
                    out.push(v[best]);
                    arg.push(best);
                }
                ([r, 1], out, arg)
            }
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::MaxPool { input: a, argmax }, rg))
    }

    /// Row gather: `out[i] = table[indices[i]]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let tt = self.value(table);
        let (r, c) = dims(tt);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::OutOfRange { op: "embedding_lookup", shape: tt.shape().to_vec(), index: bad });
        }
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(tt.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::from_vec(&[indices.len(), c], out)?, Op::Gather { table, indices: indices.to_vec() }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum::<f64>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let out: Vec<f64> = ta.values().iter().map(|x| x * x).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[r, c], out).expect("square"), Op::Square(a), rg)
    }

    /// Mean of the elementwise smooth-L1 penalty with threshold `beta`.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var, TensorError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if dims(tp) != dims(tt) {
            return Err(shape_err("smooth_l1", tp, tt));
        }
        if tp.is_empty() {
            return Err(TensorError::Empty("smooth_l1"));
        }
        let s: f64 = tp.values().iter().zip(tt.values()).map(|(x, y)| crate::objectives::smooth_l1(*x, *y, beta)).sum();
        let n = tp.len() as f64;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(s / n), Op::SmoothL1 { pred, target, beta }, rg))
    }

    /// Row-wise Chamfer distance averaged over rows. Each row of `pred` holds
    /// `cols / 3` xyz points, likewise for `target`.
    pub fn chamfer(&mut self, pred: Var, target: Var, squared: bool) -> Result<Var, TensorError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        let (rows, cp) = dims(tp);
        let (rows_t, ct) = dims(tt);
        if rows != rows_t || cp % 3 != 0 || ct % 3 != 0 {
            return Err(shape_err("chamfer", tp, tt));
        }
        if rows == 0 || cp == 0 || ct == 0 {
            return Err(TensorError::Empty("chamfer"));
        }
        let (np, nt) = (cp / 3, ct / 3);
        let mut nn_pred = Vec::with_capacity(rows * np);
        let mut nn_target = Vec::with_capacity(rows * nt);
        let mut total = 0.0;
        for r in 0..rows {
            let p = tp.row(r);
            let q = tt.row(r);
            let (d_pq, idx_pq) = nearest_all(p, q, squared);
            let (d_qp, idx_qp) = nearest_all(q, p, squared);
            total += d_pq / np as f64 + d_qp / nt as f64;
            nn_pred.extend(idx_pq);
            nn_target.extend(idx_qp);
        }
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::Chamfer { pred, target, points_pred: np, points_target: nt, squared, nn_pred, nn_target },
            rg,
        ))
    }

    /// Reverse pass seeded with d(root)/d(root) = 1. `root` must be `[1, 1]`.
    pub fn backward(&self, root: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let root_len = self.nodes[root.0].value.len();
        grads[root.0] = Some(vec![1.0; root_len]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            // Interior gradients are dropped once propagated to keep the working set small.
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(gy);
            }
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = dims(ta);
                let n = tb.cols();
                self.acc(grads, *a, |g| gemm(m, n, k, 1.0, gy, false, tb.values(), true, 1.0, g));
                self.acc(grads, *b, |g| gemm(k, m, n, 1.0, ta.values(), true, gy, false, 1.0, g));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gy, 1.0));
                self.acc(grads, *b, |g| add_into(g, gy, 1.0));
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gy, 1.0));
                let c = y.cols();
                self.acc(grads, *b, |g| {
                    for chunk in gy.chunks(c) {
                        add_into(g, chunk, 1.0);
                    }
                });
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gy, 1.0));
                self.acc(grads, *b, |g| add_into(g, gy, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                self.acc(grads, *a, |g| {
                    for ((gi, d), x) in g.iter_mut().zip(gy).zip(vb) {
                        *gi += d * x;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((gi, d), x) in g.iter_mut().zip(gy).zip(va) {
                        *gi += d * x;
                    }
                });
            }
            Op::Scale(a, k) => self.acc(grads, *a, |g| add_into(g, gy, *k)),
            Op::Concat { inputs, axis } => {
                let total_cols = y.cols();
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let (r, c) = dims(t);
                    match axis {
                        Axis::Rows => {
                            let span = &gy[offset * total_cols..(offset + r) * total_cols];
                            self.acc(grads, v, |g| add_into(g, span, 1.0));
                            offset += r;
                        }
                        Axis::Cols => {
                            self.acc(grads, v, |g| {
                                for row in 0..r {
                                    let src = &gy[row * total_cols + offset..row * total_cols + offset + c];
                                    add_into(&mut g[row * c..(row + 1) * c], src, 1.0);
                                }
                            });
                            offset += c;
                        }
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let c_in = self.value(*input).cols();
                let (r, w) = dims(y);
                self.acc(grads, *input, |g| match axis {
                    Axis::Rows => add_into(&mut g[start * c_in..(start + r) * c_in], gy, 1.0),
                    Axis::Cols => {
                        for row in 0..r {
                            add_into(
                                &mut g[row * c_in + start..row * c_in + start + w],
                                &gy[row * w..(row + 1) * w],
                                1.0,
                            );
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = dims(y);
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[j * r + i] += gy[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.acc(grads, *a, |g| add_into(g, gy, 1.0)),
            Op::Softmax { input, axis } => {
                let (r, c) = dims(y);
                let yv = y.values();
                let (outer, inner, so, si) = match axis {
                    Axis::Cols => (r, c, c, 1),
                    Axis::Rows => (c, r, 1, c),
                };
                self.acc(grads, *input, |g| {
                    for o in 0..outer {
                        let base = o * so;
                        let dot: f64 = (0..inner).map(|k| gy[base + k * si] * yv[base + k * si]).sum();
                        for k in 0..inner {
                            let idx = base + k * si;
                            g[idx] += yv[idx] * (gy[idx] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { input, gamma, beta, xhat, rstd } => {
                let (r, c) = dims(y);
                let gv = self.value(*gamma).values();
                self.acc(grads, *gamma, |g| {
                    for row in 0..r {
                        for j in 0..c {
                            g[j] += gy[row * c + j] * xhat[row * c + j];
                        }
                    }
                });
                self.acc(grads, *beta, |g| {
                    for chunk in gy.chunks(c) {
                        add_into(g, chunk, 1.0);
                    }
                });
                self.acc(grads, *input, |g| {
                    let mut dxhat = vec![0.0; c];
                    for row in 0..r {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let d = gy[row * c + j] * gv[j];
                            dxhat[j] = d;
                            m1 += d;
                            m2 += d * xhat[row * c + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            g[row * c + j] += rstd[row] * (dxhat[j] - m1 - xhat[row * c + j] * m2);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).values();
                self.acc(grads, *a, |g| {
                    for ((gi, d), &x) in g.iter_mut().zip(gy).zip(xv) {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gi += d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k) = dims(tx);
                let n = tw.cols();
                self.acc(grads, *x, |g| gemm(m, n, k, 1.0, gy, false, tw.values(), true, 1.0, g));
                self.acc(grads, *w, |g| gemm(k, m, n, 1.0, tx.values(), true, gy, false, 1.0, g));
                self.acc(grads, *b, |g| {
                    for chunk in gy.chunks(n) {
                        add_into(g, chunk, 1.0);
                    }
                });
            }
            Op::MeanPool { input, axis } => {
                let (r, c) = dims(self.value(*input));
                self.acc(grads, *input, |g| match axis {
                    Axis::Rows => {
                        for row in 0..r {
                            add_into(&mut g[row * c..(row + 1) * c], gy, 1.0 / r as f64);
                        }
                    }
                    Axis::Cols => {
                        for row in 0..r {
                            g[row * c..(row + 1) * c].iter_mut().for_each(|v| *v += gy[row] / c as f64);
                        }
                    }
                });
            }
            Op::MaxPool { input, argmax, .. } => {
                self.acc(grads, *input, |g| {
                    for (d, &idx) in gy.iter().zip(argmax) {
                        g[idx] += d;
                    }
                });
            }
            Op::Gather { table, indices } => {
                let c = y.cols();
                self.acc(grads, *table, |g| {
                    for (row, &src) in indices.iter().enumerate() {
                        add_into(&mut g[src * c..(src + 1) * c], &gy[row * c..(row + 1) * c], 1.0);
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |g| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.acc(grads, *a, |g| g.iter_mut().for_each(|v| *v += gy[0] / n));
            }
            Op::Square(a) => {
                let xv = self.value(*a).values();
                self.acc(grads, *a, |g| {
                    for ((gi, d), x) in g.iter_mut().zip(gy).zip(xv) {
                        *gi += 2.0 * d * x;
                    }
                });
            }
            Op::SmoothL1 { pred, target, beta } => {
                let (pv, tv) = (self.value(*pred).values(), self.value(*target).values());
                let n = pv.len() as f64;
                let deriv: Vec<f64> = pv
                    .iter()
                    .zip(tv)
                    .map(|(x, t)| {
                        let e = x - t;
                        let d = if e.abs() < *beta { e / beta } else { e.signum() };
                        gy[0] * d / n
                    })
                    .collect();
                self.acc(grads, *pred, |g| add_into(g, &deriv, 1.0));
                self.acc(grads, *target, |g| add_into(g, &deriv, -1.0));
            }
            Op::Chamfer { pred, target, points_pred, points_target, squared, nn_pred, nn_target } => {
                let (tp, tt) = (self.value(*pred), self.value(*target));
                let rows = tp.rows();
                let (np, nt) = (*points_pred, *points_target);
                let scale = gy[0] / rows as f64;
                let mut gp = vec![0.0; tp.len()];
                let mut gt = vec![0.0; tt.len()];
                for r in 0..rows {
                    let p = tp.row(r);
                    let q = tt.row(r);
                    let w = scale / np as f64;
                    for i in 0..np {
                        let j = nn_pred[r * np + i];
                        let d = dist_grad(&p[3 * i..3 * i + 3], &q[3 * j..3 * j + 3], *squared);
                        for a in 0..3 {
                            gp[r * 3 * np + 3 * i + a] += w * d[a];
                            gt[r * 3 * nt + 3 * j + a] -= w * d[a];
                        }
                    }
                    let w = scale / nt as f64;
                    for j in 0..nt {
                        let i = nn_target[r * nt + j];
                        let d = dist_grad(&q[3 * j..3 * j + 3], &p[3 * i..3 * i + 3], *squared);
                        for a in 0..3 {
                            gt[r * 3 * nt + 3 * j + a] += w * d[a];
                            gp[r * 3 * np + 3 * i + a] -= w * d[a];
                        }
                    }
                }
                self.acc(grads, *pred, |g| add_into(g, &gp, 1.0));
                self.acc(grads, *target, |g| add_into(g, &gt, 1.0));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn point_dist(a: &[f64], b: &[f64], squared: bool) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
    if squared {
        d2
    } else {
        d2.sqrt()
    }
}

/// d/da of the point distance between `a` and `b`.
fn dist_grad(a: &[f64], b: &[f64], squared: bool) -> [f64; 3] {
    let diff = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    if squared {
        return [2.0 * diff[0], 2.0 * diff[1], 2.0 * diff[2]];
    }
    let n = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
    if n == 0.0 {
        return [0.0; 3];
    }
    [diff[0] / n, diff[1] / n, diff[2] / n]
}

/// For every point of `from`, the distance to and index of its nearest point in
/// `to` (first index wins on ties). Returns the distance sum and the indices.
fn nearest_all(from: &[f64], to: &[f64], squared: bool) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(from.len() / 3);
    for p in from.chunks_exact(3) {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, q) in to.chunks_exact(3).enumerate() {
            let d = point_dist(p, q, true);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        total += if squared { best } else { best.sqrt() };
        idx.push(best_j);
    }
    (total, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_leaf_gradients_are_kept() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(2, 2, |i, j| (i + 2 * j) as f64 - 1.0));
        let y = g.gelu(x);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).map(|v| v.len()), Some(4));
        assert!(grads.get(y).is_none());
    }
}
