//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every primitive in execution order, so the node vector
//! is already topologically sorted and the backward pass is a single reverse
//! sweep. Binary elementwise ops broadcast only a `1×1`, `n×1` or `1×m`
//! operand against a full-shape one.

use std::ops::Range;

use crate::error::{HcgrError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Square,
    Exp,
    Log,
    Sqrt,
    Cosh,
    Sinh,
    /// `arcosh(max(u, 1))`.
    Arcosh,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Softplus,
    /// `sinh(√u)/√u`, smooth through `u = 0`.
    SinhcSqrt,
    /// `cosh(√u)`, smooth through `u = 0`.
    CoshSqrt,
    /// `arcosh(a)/√(a²−1)` for `a ≥ 1`, smooth through `a = 1`.
    ArcoshRatio,
}

impl Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Square => "square",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Cosh => "cosh",
            Unary::Sinh => "sinh",
            Unary::Arcosh => "arcosh",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::SinhcSqrt => "sinhc_sqrt",
            Unary::CoshSqrt => "cosh_sqrt",
            Unary::ArcoshRatio => "arcosh_ratio",
        }
    }

    fn forward(&self, x: f64) -> f64 {
        match *self {
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Cosh => x.cosh(),
            Unary::Sinh => x.sinh(),
            Unary::Arcosh => x.max(1.0).acosh(),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => crate::manifold::softplus(x),
            Unary::SinhcSqrt => sinhc_sqrt(x.max(0.0)).0,
            Unary::CoshSqrt => cosh_sqrt(x.max(0.0)).0,
            Unary::ArcoshRatio => arcosh_ratio(x.max(1.0)).0,
        }
    }

    /// Local derivative at input `x` given output `y`.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Unary::Neg => -1.0,
            Unary::Square => 2.0 * x,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => {
                if x > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Cosh => x.sinh(),
            Unary::Sinh => x.cosh(),
            Unary::Arcosh => {
                if x < 1.0 {
                    0.0
                } else {
                    let u = x.max(1.0 + 1e-12);
                    1.0 / ((u - 1.0) * (u + 1.0)).sqrt()
                }
            }
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::SinhcSqrt => {
                if x < 0.0 {
                    0.0
                } else {
                    sinhc_sqrt(x).1
                }
            }
            Unary::CoshSqrt => {
                if x < 0.0 {
                    0.0
                } else {
                    cosh_sqrt(x).1
                }
            }
            Unary::ArcoshRatio => {
                if x < 1.0 {
                    0.0
                } else {
                    arcosh_ratio(x).1
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(sinh(√u)/√u, d/du)` for `u ≥ 0`.
fn sinhc_sqrt(u: f64) -> (f64, f64) {
    if u < 1e-4 {
        let value = 1.0 + u / 6.0 + u * u / 120.0 + u * u * u / 5040.0;
        let deriv = 1.0 / 6.0 + u / 60.0 + u * u / 1680.0;
        (value, deriv)
    } else {
        let s = u.sqrt();
        let (sh, ch) = (s.sinh(), s.cosh());
        (sh / s, (s * ch - sh) / (2.0 * s * u))
    }
}

/// `(cosh(√u), d/du)` for `u ≥ 0`.
fn cosh_sqrt(u: f64) -> (f64, f64) {
    if u < 1e-4 {
        let value = 1.0 + u / 2.0 + u * u / 24.0 + u * u * u / 720.0;
        let deriv = 0.5 + u / 12.0 + u * u / 240.0;
        (value, deriv)
    } else {
        let s = u.sqrt();
        (s.cosh(), s.sinh() / (2.0 * s))
    }
}

/// `(arcosh(a)/√(a²−1), d/da)` for `a ≥ 1`.
fn arcosh_ratio(a: f64) -> (f64, f64) {
    let t = a - 1.0;
    if t < 1e-5 {
        (
            1.0 - t / 3.0 + 2.0 * t * t / 15.0,
            -1.0 / 3.0 + 4.0 * t / 15.0,
        )
    } else {
        let denom_sq = t * (a + 1.0);
        let h = a.acosh() / denom_sq.sqrt();
        (h, (1.0 - a * h) / denom_sq)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SumRows(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<Range<usize>>),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    Affine(Var, f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2], op: &str) -> Result<[usize; 2]> {
    let fits = |small: [usize; 2], full: [usize; 2]| {
        (small[0] == full[0] || small[0] == 1) && (small[1] == full[1] || small[1] == 1)
    };
    if fits(b, a) {
        Ok(a)
    } else if fits(a, b) {
        Ok(b)
    } else {
        Err(HcgrError::invalid(format!(
            "{op}: incompatible shapes {}x{} and {}x{}",
            a[0], a[1], b[0], b[1]
        )))
    }
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

/// Sums a full-shape gradient down to a broadcast operand's shape.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            out.data_mut()[bidx(shape, r, c)] += g.get(r, c);
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(HcgrError::numeric(format!("primitive `{name}`")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb, name)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut data = Vec::with_capacity(out_shape[0] * out_shape[1]);
        for r in 0..out_shape[0] {
            for c in 0..out_shape[1] {
                data.push(f(va.data()[bidx(sa, r, c)], vb.data()[bidx(sb, r, c)]));
            }
        }
        let value = Tensor::new(out_shape[0], out_shape[1], data)?;
        self.push(value, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a], "transpose")
    }

    /// Side-by-side concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| HcgrError::invalid("concat of zero tensors"))?;
        let rows = self.shape(*first)[0];
        if parts.iter().any(|p| self.shape(*p)[0] != rows) {
            return Err(HcgrError::invalid("concat_cols: row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push(value, Op::ConcatCols(parts.to_vec()), parts, "concat")
    }

    /// Stacked concatenation of tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| HcgrError::invalid("concat of zero tensors"))?;
        let cols = self.shape(*first)[1];
        if parts.iter().any(|p| self.shape(*p)[1] != cols) {
            return Err(HcgrError::invalid("concat_rows: column counts differ"));
        }
        let rows: usize = parts.iter().map(|p| self.shape(*p)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts, "concat")
    }

    /// Columns `range` of `a`.
    pub fn slice_cols(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if range.start >= range.end || range.end > cols {
            return Err(HcgrError::invalid(format!(
                "slice {}..{} out of range for {cols} columns",
                range.start, range.end
            )));
        }
        let width = range.end - range.start;
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[range.clone()]);
        }
        let value = Tensor::new(rows, width, data)?;
        self.push(value, Op::SliceCols(a, range.start), &[a], "slice")
    }

    /// Rows `idx[0], idx[1], …` of `a` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if idx.is_empty() {
            return Err(HcgrError::invalid("gather of zero rows"));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(HcgrError::invalid(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::new(idx.len(), cols, data)?;
        self.push(value, Op::GatherRows(a, idx.to_vec()), &[a], "gather")
    }

    /// Sum of all entries, as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a], "sum")
    }

    /// Per-row sums, as an `n×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let sums: Vec<f64> = (0..src.rows()).map(|r| src.row(r).iter().sum()).collect();
        let value = Tensor::column_vector(sums);
        self.push(value, Op::SumRows(a), &[a], "sum_rows")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let mut out = src.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), &[a], "softmax_rows")
    }

    /// Softmax of an `E×1` column within each contiguous segment.
    pub fn segment_softmax(&mut self, a: Var, segments: &[Range<usize>]) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if cols != 1 {
            return Err(HcgrError::invalid("segment_softmax expects a column"));
        }
        let mut covered = 0;
        for s in segments {
            if s.start != covered || s.end <= s.start {
                return Err(HcgrError::invalid("segments must tile the column in order"));
            }
            covered = s.end;
        }
        if covered != rows {
            return Err(HcgrError::invalid("segments must cover the whole column"));
        }
        let mut out = self.value(a).clone();
        for s in segments {
            softmax_in_place(&mut out.data_mut()[s.clone()]);
        }
        self.push(
            out,
            Op::SegmentSoftmax(a, segments.to_vec()),
            &[a],
            "segment_softmax",
        )
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let value = self.value(a).map(|x| kind.forward(x));
        self.push(value, Op::Unary(a, kind), &[a], kind.name())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn cosh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Cosh)
    }

    pub fn sinh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sinh)
    }

    pub fn arcosh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Arcosh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Neg)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside the open
    /// interval, including on its boundary.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi), &[a], "clamp")
    }

    /// `scale · a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale), &[a], "affine")
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            let [r, c] = self.shape(loss);
            return Err(HcgrError::invalid(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()));
                acc(*b, reduce_to(g, val(*b).shape()));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()));
                acc(*b, reduce_to(&g.map(|x| -x), val(*b).shape()));
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (va, vb) = (val(*a), val(*b));
                let (sa, sb) = (va.shape(), vb.shape());
                let [rows, cols] = g.shape();
                let mut ga = Tensor::zeros(rows, cols);
                let mut gb = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let x = va.data()[bidx(sa, r, c)];
                        let y = vb.data()[bidx(sb, r, c)];
                        let gi = g.get(r, c);
                        if is_div {
                            ga.set(r, c, gi / y);
                            gb.set(r, c, -gi * x / (y * y));
                        } else {
                            ga.set(r, c, gi * y);
                            gb.set(r, c, gi * x);
                        }
                    }
                }
                acc(*a, reduce_to(&ga, sa));
                acc(*b, reduce_to(&gb, sb));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul(&vb.transpose()).expect("shapes checked"));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, va.transpose().matmul(g).expect("shapes checked"));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let [rows, cols] = val(*p).shape();
                    let mut part = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        part.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(*p, part);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let [rows, cols] = val(*p).shape();
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    acc(*p, Tensor::new(rows, cols, data).expect("shape from value"));
                }
            }
            Op::SliceCols(a, start) => {
                let [rows, cols] = val(*a).shape();
                let width = g.cols();
                let mut full = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    full.row_mut(r)[*start..start + width].copy_from_slice(g.row(r));
                }
                acc(*a, full);
            }
            Op::GatherRows(a, idx) => {
                let [rows, cols] = val(*a).shape();
                let mut full = Tensor::zeros(rows, cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (d, s) in full.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
                acc(*a, full);
            }
            Op::Sum(a) => {
                let [rows, cols] = val(*a).shape();
                acc(*a, Tensor::filled(rows, cols, g.item()));
            }
            Op::SumRows(a) => {
                let [rows, cols] = val(*a).shape();
                let mut full = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    full.row_mut(r).fill(g.get(r, 0));
                }
                acc(*a, full);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    softmax_backward(y.row(r), g.row(r), out.row_mut(r));
                }
                acc(*a, out);
            }
            Op::SegmentSoftmax(a, segments) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), 1);
                for s in segments {
                    softmax_backward(
                        &y.data()[s.clone()],
                        &g.data()[s.clone()],
                        &mut out.data_mut()[s.clone()],
                    );
                }
                acc(*a, out);
            }
            Op::Unary(a, kind) => {
                let x = val(*a);
                let y = &node.value;
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                    .collect();
                acc(
                    *a,
                    Tensor::new(x.rows(), x.cols(), data).expect("same shape"),
                );
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > *lo && xi < *hi { gi } else { 0.0 })
                    .collect();
                acc(
                    *a,
                    Tensor::new(x.rows(), x.cols(), data).expect("same shape"),
                );
            }
            Op::Affine(a, scale) => acc(*a, g.map(|x| x * scale)),
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(g) {
        *o = yi * (gi - dot);
    }
}
