//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward operation as a node holding its output
//! value, the indices of its inputs and the operation kind. Nodes are
//! appended in evaluation order, so the tape is always topologically sorted
//! and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use attnmix_core::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm, softmax_row, softmax_vjp_row, sparsemax_row, sparsemax_vjp_row, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul { a: usize, b: usize, transpose_b: bool },
    Affine { x: usize, w: usize, b: usize },
    AddBias { x: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Elu(usize),
    Abs(usize),
    Square(usize),
    Softmax(usize),
    Sparsemax(usize),
    MeanAxis1(usize),
    ConcatCols(usize, usize),
    GatherCols(usize, Vec<usize>),
    SliceRows { a: usize, start: usize },
    ConcatRows(Vec<usize>),
    Reshape(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Single-owner recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a backward root with respect to trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, left: Shape, right: Shape) -> Error {
    Error::ShapeMismatch { op, left, right }
}

/// Mask row for row `r` of a tensor of shape `shape` (see [`Tape::softmax`]).
fn mask_for_row(keep: Option<&[bool]>, shape: Shape, r: usize) -> Option<&[bool]> {
    let keep = keep?;
    let n = shape.last();
    if keep.len() == n {
        return Some(keep);
    }
    let rows_per_group = shape.dims()[1];
    let g = r / rows_per_group;
    Some(&keep[g * n..(g + 1) * n])
}

fn check_mask(op: &'static str, keep: Option<&[bool]>, shape: Shape) -> Result<()> {
    let Some(keep) = keep else { return Ok(()) };
    let n = shape.last();
    let grouped = shape.rank() == 3 && keep.len() == shape.dims()[0] * n;
    if keep.len() != n && !grouped {
        return Err(mismatch(op, shape, Shape::vector(keep.len())));
    }
    let groups = if grouped { shape.dims()[0] } else { 1 };
    for g in 0..groups {
        if !keep[g * n..(g + 1) * n].iter().any(|&k| k) {
            return Err(mismatch(op, shape, Shape::vector(0)));
        }
    }
    Ok(())
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Drops every node recorded after the first `len`, so a tape holding
    /// bound parameters can be reused for many forward passes.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        value.ensure_finite(op_name)?;
        Ok(self.push_unchecked(value, op, inputs))
    }

    /// For ops that only move, select or squash input values: their output
    /// can be non-finite only if an input already was.
    fn push_unchecked(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        self.push("matmul", out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// Batched product of `[B×m×k]` with `[B×k×n]`, or with `[B×n×k]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rank() != 3 || sb.rank() != 3 || sa.dims()[0] != sb.dims()[0] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (batch, m, k) = (sa.dims()[0], sa.dims()[1], sa.dims()[2]);
        let (bk, n) = if transpose_b { (sb.dims()[2], sb.dims()[1]) } else { (sb.dims()[1], sb.dims()[2]) };
        if bk != k {
            return Err(mismatch("bmm", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let b_strides = if transpose_b { (1, k) } else { (n, 1) };
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    (k, 1),
                    &bv[i * k * n..(i + 1) * k * n],
                    b_strides,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let value = Tensor::new(Shape::rank3(batch, m, n), out)?;
        self.push("bmm", value, Op::BatchMatMul { a: a.0, b: b.0, transpose_b }, &[a.0, b.0])
    }

    /// `x[m×k] · w[k×n] + bias[n]`.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(bias));
        if sx.rank() != 2 || sw.rank() != 2 || sx.dims()[1] != sw.dims()[0] {
            return Err(mismatch("affine", sx, sw));
        }
        let (m, k, n) = (sx.dims()[0], sx.dims()[1], sw.dims()[1]);
        if sb.numel() != n {
            return Err(mismatch("affine", sw, sb));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(m, k, n, self.value(x).data(), (k, 1), self.value(w).data(), (n, 1), &mut out, true);
        let value = Tensor::matrix(m, n, out);
        self.push("affine", value, Op::Affine { x: x.0, w: w.0, b: bias.0 }, &[x.0, w.0, bias.0])
    }

    /// Adds `bias[n]` to every innermost row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = sx.last();
        if sb.numel() != n {
            return Err(mismatch("add_bias", sx, sb));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for row in value.data_mut().chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        self.push("add_bias", value, Op::AddBias { x: x.0, b: bias.0 }, &[x.0, bias.0])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(sa, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push("scale", v, Op::Scale(a.0, c), &[a.0])
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x = f(*x));
        v
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| 1.0 / (1.0 + libm::exp(-x)));
        Ok(self.push_unchecked(v, Op::Sigmoid(a.0), &[a.0]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, libm::tanh);
        Ok(self.push_unchecked(v, Op::Tanh(a.0), &[a.0]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push_unchecked(v, Op::Relu(a.0), &[a.0]))
    }

    /// ELU with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| if x > 0.0 { x } else { libm::expm1(x) });
        self.push("elu", v, Op::Elu(a.0), &[a.0])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, f64::abs);
        Ok(self.push_unchecked(v, Op::Abs(a.0), &[a.0]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| x * x);
        self.push("square", v, Op::Square(a.0), &[a.0])
    }

    /// Softmax along the innermost axis.
    ///
    /// `keep` masks entries of the innermost axis: either one mask of length
    /// `n` shared by all rows, or for a `[B×m×n]` input a `[B×n]` mask applied
    /// to all `m` rows of each batch element. Masked entries get exact zeros.
    pub fn softmax(&mut self, z: Var, keep: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(z);
        check_mask("softmax", keep, shape)?;
        let n = shape.last();
        let mut v = self.value(z).clone();
        for (r, row) in v.data_mut().chunks_mut(n).enumerate() {
            softmax_row(row, mask_for_row(keep, shape, r));
        }
        self.push("softmax", v, Op::Softmax(z.0), &[z.0])
    }

    /// Sparsemax along the innermost axis, with the same masking rules as
    /// [`Tape::softmax`].
    pub fn sparsemax(&mut self, z: Var, keep: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(z);
        check_mask("sparsemax", keep, shape)?;
        let n = shape.last();
        let mut v = self.value(z).clone();
        let mut scratch = Vec::with_capacity(n);
        for (r, row) in v.data_mut().chunks_mut(n).enumerate() {
            sparsemax_row(row, mask_for_row(keep, shape, r), &mut scratch);
        }
        self.push("sparsemax", v, Op::Sparsemax(z.0), &[z.0])
    }

    /// Mean over the middle axis: `[B×m×d] → [B×d]`.
    pub fn mean_axis1(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.rank() != 3 || s.dims()[1] == 0 {
            return Err(mismatch("mean_axis1", s, Shape::rank3(1, 1, 1)));
        }
        let (b, m, d) = (s.dims()[0], s.dims()[1], s.dims()[2]);
        let src = self.value(a).data();
        let mut out = vec![0.0; b * d];
        let inv = 1.0 / m as f64;
        for i in 0..b {
            let acc = &mut out[i * d..(i + 1) * d];
            for r in 0..m {
                let row = &src[(i * m + r) * d..(i * m + r + 1) * d];
                for (o, x) in acc.iter_mut().zip(row) {
                    *o += x;
                }
            }
            acc.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::matrix(b, d, out);
        self.push("mean_axis1", value, Op::MeanAxis1(a.0), &[a.0])
    }

    /// `[m×p] ⊕ [m×q] → [m×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rank() != 2 || sb.rank() != 2 || sa.dims()[0] != sb.dims()[0] {
            return Err(mismatch("concat_cols", sa, sb));
        }
        let (m, p, q) = (sa.dims()[0], sa.dims()[1], sb.dims()[1]);
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        let value = Tensor::matrix(m, p + q, out);
        Ok(self.push_unchecked(value, Op::ConcatCols(a.0, b.0), &[a.0, b.0]))
    }

    /// Picks `a[i, idx[i]]` from each row of a `[m×n]` matrix.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.rank() != 2 || s.dims()[0] != idx.len() || idx.iter().any(|&j| j >= s.dims()[1]) {
            return Err(mismatch("gather_cols", s, Shape::vector(idx.len())));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| self.value(a).row(i)[j]).collect();
        let value = Tensor::vector(data);
        Ok(self.push_unchecked(value, Op::GatherCols(a.0, idx.to_vec()), &[a.0]))
    }

    /// Rows `start..start + count` of a `[m×d]` matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.rank() != 2 || start + count > s.dims()[0] {
            return Err(mismatch("slice_rows", s, Shape::vector(start + count)));
        }
        let d = s.dims()[1];
        let data = self.value(a).data()[start * d..(start + count) * d].to_vec();
        let value = Tensor::matrix(count, d, data);
        Ok(self.push_unchecked(value, Op::SliceRows { a: a.0, start }, &[a.0]))
    }

    /// Stacks `[mᵢ×d]` matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat_rows", Shape::vector(0), Shape::vector(0)));
        };
        let s0 = self.shape(first);
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.rank() != 2 || s0.rank() != 2 || s.dims()[1] != s0.dims()[1] {
                return Err(mismatch("concat_rows", s0, s));
            }
            rows += s.dims()[0];
        }
        let mut data = Vec::with_capacity(rows * s0.dims()[1]);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, s0.dims()[1], data);
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push_unchecked(value, Op::ConcatRows(idx.clone()), &idx))
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push_unchecked(value, Op::Reshape(a.0), &[a.0]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a.0), &[a.0])
    }

    /// Reverse sweep from a scalar `root`. Returns the gradient of every
    /// trainable leaf the root depends on and clears the tape.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::NotScalar(root_node.value.shape()));
        }
        if !root_node.requires_grad {
            return Err(Error::DetachedRoot);
        }

        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Vec::with_capacity(grads.len());
        for (i, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            out.push(match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => Some(Tensor::new(node.value.shape(), g)?),
                _ => None,
            });
        }
        self.nodes.clear();
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let val = |j: usize| nodes[j].value.data();
        let out = nodes[i].value.data();
        match nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
                let (m, k, n) = (sa.dims()[0], sa.dims()[1], sb.dims()[1]);
                if wants(a) {
                    // dA = G·Bᵀ
                    gemm(m, n, k, g, (n, 1), val(b), (1, n), slot(grads, a, m * k), true);
                }
                if wants(b) {
                    // dB = Aᵀ·G
                    gemm(k, m, n, val(a), (1, k), g, (n, 1), slot(grads, b, k * n), true);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = nodes[a].value.shape();
                let sb = nodes[b].value.shape();
                let (batch, m, k) = (sa.dims()[0], sa.dims()[1], sa.dims()[2]);
                let n = if transpose_b { sb.dims()[1] } else { sb.dims()[2] };
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    let da = slot(grads, a, batch * m * k);
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &bv[t * k * n..(t + 1) * k * n];
                        let dst = &mut da[t * m * k..(t + 1) * m * k];
                        if transpose_b {
                            // C = A·Bᵀ, B is n×k: dA = G·B
                            gemm(m, n, k, gt, (n, 1), bt, (k, 1), dst, true);
                        } else {
                            gemm(m, n, k, gt, (n, 1), bt, (1, n), dst, true);
                        }
                    }
                }
                if wants(b) {
                    let db = slot(grads, b, batch * k * n);
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &av[t * m * k..(t + 1) * m * k];
                        let dst = &mut db[t * k * n..(t + 1) * k * n];
                        if transpose_b {
                            // dB = Gᵀ·A  (n×k)
                            gemm(n, m, k, gt, (1, n), at, (k, 1), dst, true);
                        } else {
                            gemm(k, m, n, at, (1, k), gt, (n, 1), dst, true);
                        }
                    }
                }
            }
            Op::Affine { x, w, b } => {
                let (sx, sw) = (nodes[x].value.shape(), nodes[w].value.shape());
                let (m, k, n) = (sx.dims()[0], sx.dims()[1], sw.dims()[1]);
                if wants(x) {
                    gemm(m, n, k, g, (n, 1), val(w), (1, n), slot(grads, x, m * k), true);
                }
                if wants(w) {
                    gemm(k, m, n, val(x), (1, k), g, (n, 1), slot(grads, w, k * n), true);
                }
                if wants(b) {
                    column_sums_into(g, n, slot(grads, b, n));
                }
            }
            Op::AddBias { x, b } => {
                let n = nodes[b].value.len();
                if wants(x) {
                    add_into(slot(grads, x, g.len()), g, 1.0);
                }
                if wants(b) {
                    column_sums_into(g, n, slot(grads, b, n));
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    add_into(slot(grads, a, g.len()), g, 1.0);
                }
                if wants(b) {
                    add_into(slot(grads, b, g.len()), g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    add_into(slot(grads, a, g.len()), g, 1.0);
                }
                if wants(b) {
                    add_into(slot(grads, b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let other = val(b);
                    for ((d, gi), o) in slot(grads, a, g.len()).iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
                if wants(b) {
                    let other = val(a);
                    for ((d, gi), o) in slot(grads, b, g.len()).iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
            }
            Op::Scale(a, c) => add_into(slot(grads, a, g.len()), g, c),
            Op::Sigmoid(a) => {
                for ((d, gi), y) in slot(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                for ((d, gi), y) in slot(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                for ((d, gi), y) in slot(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    if *y > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Elu(a) => {
                for ((d, gi), y) in slot(grads, a, g.len()).iter_mut().zip(g).zip(out) {
                    *d += if *y > 0.0 { *gi } else { gi * (y + 1.0) };
                }
            }
            Op::Abs(a) => {
                let x = val(a);
                for ((d, gi), xi) in slot(grads, a, g.len()).iter_mut().zip(g).zip(x) {
                    if *xi > 0.0 {
                        *d += gi;
                    } else if *xi < 0.0 {
                        *d -= gi;
                    }
                }
            }
            Op::Square(a) => {
                let x = val(a);
                for ((d, gi), xi) in slot(grads, a, g.len()).iter_mut().zip(g).zip(x) {
                    *d += 2.0 * gi * xi;
                }
            }
            Op::Softmax(a) | Op::Sparsemax(a) => {
                let sparse = matches!(nodes[i].op, Op::Sparsemax(_));
                let n = nodes[i].value.shape().last();
                let mut row_g = vec![0.0; n];
                let dst = slot(grads, a, g.len());
                for ((o, gr), d) in out.chunks(n).zip(g.chunks(n)).zip(dst.chunks_mut(n)) {
                    row_g.copy_from_slice(gr);
                    if sparse {
                        sparsemax_vjp_row(o, &mut row_g);
                    } else {
                        softmax_vjp_row(o, &mut row_g);
                    }
                    add_into(d, &row_g, 1.0);
                }
            }
            Op::MeanAxis1(a) => {
                let s = nodes[a].value.shape();
                let (b, m, d) = (s.dims()[0], s.dims()[1], s.dims()[2]);
                let inv = 1.0 / m as f64;
                let dst = slot(grads, a, b * m * d);
                for t in 0..b {
                    let gt = &g[t * d..(t + 1) * d];
                    for r in 0..m {
                        add_into(&mut dst[(t * m + r) * d..(t * m + r + 1) * d], gt, inv);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let p = nodes[a].value.shape().dims()[1];
                let q = nodes[b].value.shape().dims()[1];
                if wants(a) {
                    let dst = slot(grads, a, g.len() / (p + q) * p);
                    for (d, gr) in dst.chunks_mut(p).zip(g.chunks(p + q)) {
                        add_into(d, &gr[..p], 1.0);
                    }
                }
                if wants(b) {
                    let dst = slot(grads, b, g.len() / (p + q) * q);
                    for (d, gr) in dst.chunks_mut(q).zip(g.chunks(p + q)) {
                        add_into(d, &gr[p..], 1.0);
                    }
                }
            }
            Op::GatherCols(a, ref idx) => {
                let n = nodes[a].value.shape().last();
                let dst = slot(grads, a, idx.len() * n);
                for (r, (&j, gi)) in idx.iter().zip(g).enumerate() {
                    dst[r * n + j] += gi;
                }
            }
            Op::SliceRows { a, start } => {
                let sa = nodes[a].value.shape();
                let d = sa.dims()[1];
                let dst = slot(grads, a, sa.numel());
                add_into(&mut dst[start * d..start * d + g.len()], g, 1.0);
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    if wants(p) {
                        add_into(slot(grads, p, n), &g[offset..offset + n], 1.0);
                    }
                    offset += n;
                }
            }
            Op::Reshape(a) => add_into(slot(grads, a, g.len()), g, 1.0),
            Op::Sum(a) => {
                let n = nodes[a].value.len();
                let gi = g[0];
                slot(grads, a, n).iter_mut().for_each(|d| *d += gi);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], j: usize, len: usize) -> &mut [f64] {
    grads[j].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn column_sums_into(g: &[f64], n: usize, dst: &mut [f64]) {
    for row in g.chunks(n) {
        add_into(dst, row, 1.0);
    }
}
