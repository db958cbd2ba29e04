use std::borrow::Cow;

use super::kernels::{axpy, dot, matmul, transpose};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Clip(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    GatherRows(Var, Vec<Option<usize>>),
    RowDot(Var, Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentWeightedSum(Var, Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients produced by [`Graph::backward`], indexed like the
/// [`super::ParamSet`] the parameters came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Scalar> {
    pub by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, k: usize) -> Option<&Tensor<T>> {
        self.by_param.get(k).and_then(Option::as_ref)
    }
}

/// Dynamic computation graph. Values are computed eagerly as nodes are added,
/// so node order is a topological order by construction.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    backward_done: bool,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Branch taken at every element of every piecewise op (leaky ReLU, clip,
    /// minimum). Two evaluations with equal patterns lie on the same smooth
    /// piece, which is what finite-difference checks need to know.
    pub fn branch_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu(x, _) => out.extend(self.value(x).data().iter().map(|&v| (v >= T::ZERO) as u8)),
                Op::Clip(x, lo, hi) => out.extend(self.value(x).data().iter().map(|&v| {
                    let v = v.to_f64();
                    (v < lo) as u8 | ((v > hi) as u8) << 1
                })),
                Op::Minimum(a, b) => out.extend(
                    self.value(a)
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(x, y)| (x <= y) as u8),
                ),
                _ => {}
            }
        }
        out
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowed from a parameter set; `index` keys the gradient.
    pub fn param(&mut self, index: usize, t: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Param(index),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- forward primitives ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ma, ka) = (ta.shape().len() == 2).then(|| ta.rows_cols()).ok_or_else(|| shape_err("matmul", ta, tb))?;
        let (kb, nb) = (tb.shape().len() == 2).then(|| tb.rows_cols()).ok_or_else(|| shape_err("matmul", ta, tb))?;
        if ka != kb {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![T::ZERO; ma * nb];
        matmul(ta.data(), tb.data(), &mut out, ma, ka, nb);
        let t = Tensor::new(vec![ma, nb], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (_, n) = tx.rows_cols();
        if tb.shape() != [n] {
            return Err(shape_err("bias_add", tx, tb));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_exact_mut(n.max(1)) {
            for (y, &bb) in row.iter_mut().zip(tb.data()) {
                *y += bb;
            }
        }
        Ok(self.push(out, Op::BiasAdd(x, b), &[x, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "minimum", Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let t = self.value(x).map(f);
        self.push(t, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cc = T::from_f64(c);
        self.unary(x, Op::Scale(x, c), |v| v * cc)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v >= T::ZERO { v } else { s * v })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), T::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), T::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), T::ln)
    }

    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(x, Op::Clip(x, lo, hi), |v| v.max(l).min(h))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let (_, n) = t.rows_cols();
        for row in t.data_mut().chunks_exact_mut(n.max(1)) {
            softmax_in_place(row);
        }
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let (_, n) = t.rows_cols();
        for row in t.data_mut().chunks_exact_mut(n.max(1)) {
            let m = row.iter().copied().fold(row[0], T::max);
            let mut z = T::ZERO;
            for &v in row.iter() {
                z += (v - m).exp();
            }
            let lz = m + z.ln();
            for v in row.iter_mut() {
                *v -= lz;
            }
        }
        self.push(t, Op::LogSoftmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::ZERO;
        for &v in self.value(x).data() {
            s += v;
        }
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut s = T::ZERO;
        for &v in t.data() {
            s += v;
        }
        let n = T::from_f64(t.len().max(1) as f64);
        self.push(Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    /// Row sums of a matrix: `[m, n] -> [m]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = t.rows_cols();
        let data = (0..m)
            .map(|i| {
                let mut s = T::ZERO;
                for &v in &t.data()[i * n..(i + 1) * n] {
                    s += v;
                }
                s
            })
            .collect();
        self.push(Tensor::vector(data), Op::SumCols(x), &[x])
    }

    /// Concatenation of matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Graph("concat of zero tensors".into()))?;
        let t0 = self.value(first);
        if t0.shape().len() != 2 || axis > 1 {
            return Err(Error::Graph(format!("concat needs matrices, axis 0 or 1 (axis {axis})")));
        }
        let (m0, n0) = t0.rows_cols();
        for &p in &parts[1..] {
            let tp = self.value(p);
            let (m, n) = tp.rows_cols();
            if tp.shape().len() != 2 || (axis == 0 && n != n0) || (axis == 1 && m != m0) {
                return Err(shape_err("concat", t0, tp));
            }
        }
        let t = if axis == 0 {
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
                rows += self.value(p).rows_cols().0;
            }
            Tensor::new(vec![rows, n0], data)?
        } else {
            let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).rows_cols().1).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m0 * total);
            for i in 0..m0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            Tensor::new(vec![m0, total], data)?
        };
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.rows_cols();
        if start > end || end > n || t.shape().len() != 2 {
            return Err(Error::Graph(format!("slice_cols {start}..{end} of {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::new(vec![m, end - start], data)?;
        Ok(self.push(out, Op::SliceCols(x, start, end), &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.rows_cols();
        if start > end || end > m || t.shape().len() != 2 {
            return Err(Error::Graph(format!("slice_rows {start}..{end} of {:?}", t.shape())));
        }
        let out = Tensor::new(vec![end - start, n], t.data()[start * n..end * n].to_vec())?;
        Ok(self.push(out, Op::SliceRows(x, start, end), &[x]))
    }

    /// Row gather; `None` produces a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.rows_cols();
        let mut data = vec![T::ZERO; index.len() * n];
        for (dst, src) in data.chunks_exact_mut(n.max(1)).zip(&index) {
            if let Some(r) = *src {
                if r >= m {
                    return Err(Error::Graph(format!("gather row {r} of {m}")));
                }
                dst.copy_from_slice(t.row(r));
            }
        }
        let out = Tensor::new(vec![index.len(), n], data)?;
        Ok(self.push(out, Op::GatherRows(x, index), &[x]))
    }

    /// Row-wise dot products: `[m, n] x [m, n] -> [m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || ta.shape().len() != 2 {
            return Err(shape_err("row_dot", ta, tb));
        }
        let (m, _) = ta.rows_cols();
        let data = (0..m).map(|i| dot(ta.row(i), tb.row(i))).collect();
        Ok(self.push(Tensor::vector(data), Op::RowDot(a, b), &[a, b]))
    }

    /// Softmax within each segment `offsets[b]..offsets[b + 1]` of a vector.
    pub fn segment_softmax(&mut self, x: Var, offsets: Vec<usize>) -> Result<Var> {
        let mut t = self.value(x).clone();
        check_offsets(&offsets, t.len(), t.shape())?;
        for w in offsets.windows(2) {
            if w[1] > w[0] {
                softmax_in_place(&mut t.data_mut()[w[0]..w[1]]);
            }
        }
        Ok(self.push(t, Op::SegmentSoftmax(x, offsets.clone()), &[x]))
    }

    /// `out[b] = sum_{i in segment b} w[i] * h[i]`; empty segments give zero.
    pub fn segment_weighted_sum(&mut self, w: Var, h: Var, offsets: Vec<usize>) -> Result<Var> {
        let (tw, th) = (self.value(w), self.value(h));
        let (m, d) = th.rows_cols();
        if tw.shape() != [m] || th.shape().len() != 2 {
            return Err(shape_err("segment_weighted_sum", tw, th));
        }
        check_offsets(&offsets, m, th.shape())?;
        let b = offsets.len() - 1;
        let mut data = vec![T::ZERO; b * d];
        for (k, out) in data.chunks_exact_mut(d.max(1)).enumerate() {
            for i in offsets[k]..offsets[k + 1] {
                axpy(tw.data()[i], th.row(i), out);
            }
        }
        let t = Tensor::new(vec![b, d], data)?;
        Ok(self.push(t, Op::SegmentWeightedSum(w, h, offsets), &[w, h]))
    }

    /// Attention-style weighted sum of the rows of `h` (single segment).
    pub fn weighted_sum(&mut self, w: Var, h: Var) -> Result<Var> {
        let n = self.value(h).rows_cols().0;
        self.segment_weighted_sum(w, h, vec![0, n])
    }

    /// Picks `x[i, cols[i]]` for every row.
    pub fn select_cols(&mut self, x: Var, cols: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.rows_cols();
        if cols.len() != m || cols.iter().any(|&c| c >= n) {
            return Err(Error::Graph(format!("select_cols: {} indices for {:?}", cols.len(), t.shape())));
        }
        let data = cols.iter().enumerate().map(|(i, &c)| t.data()[i * n + c]).collect();
        Ok(self.push(Tensor::vector(data), Op::SelectCols(x, cols), &[x]))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-mode accumulation from a scalar `loss`. Can run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        if self.backward_done {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let n_params = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(k) => Some(k + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::ONE]);
        let mut out = Grads {
            by_param: vec![None; n_params],
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let y = &*node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(k) => {
                    let slot = &mut out.by_param[*k];
                    match slot {
                        Some(t) => {
                            for (a, b) in t.data_mut().iter_mut().zip(&g) {
                                *a += *b;
                            }
                        }
                        None => *slot = Some(Tensor::new(y.shape().to_vec(), g)?),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.rows_cols();
                    let n = tb.rows_cols().1;
                    if self.needs(*a) {
                        let bt = transpose(tb.data(), k, n);
                        let mut ga = vec![T::ZERO; m * k];
                        matmul(&g, &bt, &mut ga, m, n, k);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let at = transpose(ta.data(), m, k);
                        let mut gb = vec![T::ZERO; k * n];
                        matmul(&at, &g, &mut gb, k, m, n);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::BiasAdd(x, b) => {
                    if self.needs(*b) {
                        let n = self.value(*b).len();
                        let mut gb = vec![T::ZERO; n];
                        for row in g.chunks_exact(n.max(1)) {
                            for (s, &v) in gb.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|&v| -v).collect());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.iter().zip(tb).map(|(&gi, &bi)| gi * bi).collect());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().zip(ta).map(|(&gi, &ai)| gi * ai).collect());
                    }
                }
                Op::Minimum(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let pick_a: Vec<bool> = ta.iter().zip(tb).map(|(x, y)| x <= y).collect();
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.iter().zip(&pick_a).map(|(&gi, &p)| if p { gi } else { T::ZERO }).collect());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().zip(&pick_a).map(|(&gi, &p)| if p { T::ZERO } else { gi }).collect());
                    }
                }
                Op::Scale(x, c) => {
                    let c = T::from_f64(*c);
                    accumulate(&mut grads, *x, g.iter().map(|&v| v * c).collect());
                }
                Op::LeakyRelu(x, slope) => {
                    let s = T::from_f64(*slope);
                    let tx = self.value(*x).data();
                    accumulate(&mut grads, *x, g.iter().zip(tx).map(|(&gi, &xi)| if xi >= T::ZERO { gi } else { gi * s }).collect());
                }
                Op::Tanh(x) => {
                    accumulate(&mut grads, *x, g.iter().zip(y.data()).map(|(&gi, &yi)| gi * (T::ONE - yi * yi)).collect());
                }
                Op::Sigmoid(x) => {
                    accumulate(&mut grads, *x, g.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi * (T::ONE - yi)).collect());
                }
                Op::Exp(x) => {
                    accumulate(&mut grads, *x, g.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).collect());
                }
                Op::Log(x) => {
                    let tx = self.value(*x).data();
                    accumulate(&mut grads, *x, g.iter().zip(tx).map(|(&gi, &xi)| gi / xi).collect());
                }
                Op::Clip(x, lo, hi) => {
                    let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                    let tx = self.value(*x).data();
                    accumulate(&mut grads, *x, g.iter().zip(tx).map(|(&gi, &xi)| if xi >= l && xi <= h { gi } else { T::ZERO }).collect());
                }
                Op::Softmax(x) => {
                    let (_, n) = y.rows_cols();
                    let mut gx = vec![T::ZERO; g.len()];
                    for ((gr, yr), out) in g.chunks_exact(n).zip(y.data().chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                        softmax_backward(gr, yr, out);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSoftmax(x) => {
                    let (_, n) = y.rows_cols();
                    let mut gx = vec![T::ZERO; g.len()];
                    for ((gr, yr), out) in g.chunks_exact(n).zip(y.data().chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                        let mut s = T::ZERO;
                        for &v in gr {
                            s += v;
                        }
                        for ((o, &gi), &li) in out.iter_mut().zip(gr).zip(yr) {
                            *o = gi - li.exp() * s;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0] / T::from_f64(n.max(1) as f64); n]);
                }
                Op::SumCols(x) => {
                    let (_, n) = self.value(*x).rows_cols();
                    let gx = g.iter().flat_map(|&gi| std::iter::repeat(gi).take(n)).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat(parts, axis) => {
                    let total = y.rows_cols().1;
                    let mut offset = 0;
                    for &p in parts {
                        let (m, n) = self.value(p).rows_cols();
                        if self.needs(p) {
                            let gp = if *axis == 0 {
                                g[offset * n..(offset + m) * n].to_vec()
                            } else {
                                (0..m).flat_map(|i| g[i * total + offset..i * total + offset + n].iter().copied()).collect()
                            };
                            accumulate(&mut grads, p, gp);
                        }
                        offset += if *axis == 0 { m } else { n };
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let (m, n) = self.value(*x).rows_cols();
                    let w = end - start;
                    let mut gx = vec![T::ZERO; m * n];
                    for i in 0..m {
                        gx[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceRows(x, start, end) => {
                    let (m, n) = self.value(*x).rows_cols();
                    let mut gx = vec![T::ZERO; m * n];
                    gx[start * n..end * n].copy_from_slice(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows(x, index) => {
                    let (m, n) = self.value(*x).rows_cols();
                    let mut gx = vec![T::ZERO; m * n];
                    for (gr, src) in g.chunks_exact(n.max(1)).zip(index) {
                        if let Some(r) = *src {
                            for (a, &b) in gx[r * n..(r + 1) * n].iter_mut().zip(gr) {
                                *a += b;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowDot(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, n) = ta.rows_cols();
                    if self.needs(*a) {
                        let mut ga = vec![T::ZERO; m * n];
                        for i in 0..m {
                            axpy(g[i], tb.row(i), &mut ga[i * n..(i + 1) * n]);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![T::ZERO; m * n];
                        for i in 0..m {
                            axpy(g[i], ta.row(i), &mut gb[i * n..(i + 1) * n]);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SegmentSoftmax(x, offsets) => {
                    let mut gx = vec![T::ZERO; g.len()];
                    for w in offsets.windows(2) {
                        softmax_backward(&g[w[0]..w[1]], &y.data()[w[0]..w[1]], &mut gx[w[0]..w[1]]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentWeightedSum(w, h, offsets) => {
                    let (tw, th) = (self.value(*w), self.value(*h));
                    let (m, d) = th.rows_cols();
                    if self.needs(*w) {
                        let mut gw = vec![T::ZERO; m];
                        for (k, seg) in offsets.windows(2).enumerate() {
                            let gb = &g[k * d..(k + 1) * d];
                            for i in seg[0]..seg[1] {
                                gw[i] = dot(gb, th.row(i));
                            }
                        }
                        accumulate(&mut grads, *w, gw);
                    }
                    if self.needs(*h) {
                        let mut gh = vec![T::ZERO; m * d];
                        for (k, seg) in offsets.windows(2).enumerate() {
                            let gb = &g[k * d..(k + 1) * d];
                            for i in seg[0]..seg[1] {
                                axpy(tw.data()[i], gb, &mut gh[i * d..(i + 1) * d]);
                            }
                        }
                        accumulate(&mut grads, *h, gh);
                    }
                }
                Op::SelectCols(x, cols) => {
                    let (m, n) = self.value(*x).rows_cols();
                    let mut gx = vec![T::ZERO; m * n];
                    for (i, &c) in cols.iter().enumerate() {
                        gx[i * n + c] = g[i];
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn check_offsets(offsets: &[usize], len: usize, shape: &[usize]) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&len)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Graph(format!("segment offsets {offsets:?} do not partition {shape:?}")))
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(row[0], T::max);
    let mut z = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}

fn softmax_backward<T: Scalar>(g: &[T], y: &[T], out: &mut [T]) {
    let mut s = T::ZERO;
    for (&gi, &yi) in g.iter().zip(y) {
        s += gi * yi;
    }
    for ((o, &gi), &yi) in out.iter_mut().zip(g).zip(y) {
        *o = yi * (gi - s);
    }
}
