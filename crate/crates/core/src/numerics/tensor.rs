use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Extents of a tensor of rank 0 to 3.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 3],
    rank: u8,
}

impl Shape {
    pub const fn scalar() -> Self {
        Shape { dims: [1, 1, 1], rank: 0 }
    }

    pub const fn vector(n: usize) -> Self {
        Shape { dims: [n, 1, 1], rank: 1 }
    }

    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape { dims: [rows, cols, 1], rank: 2 }
    }

    pub const fn rank3(batch: usize, rows: usize, cols: usize) -> Self {
        Shape { dims: [batch, rows, cols], rank: 3 }
    }

    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [] => Some(Self::scalar()),
            [n] => Some(Self::vector(n)),
            [m, n] => Some(Self::matrix(m, n)),
            [b, m, n] => Some(Self::rank3(b, m, n)),
            _ => None,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Size of the innermost axis (1 for scalars).
    pub fn last(&self) -> usize {
        match self.rank {
            0 => 1,
            r => self.dims[r as usize - 1],
        }
    }

    /// Number of innermost-axis rows, i.e. `numel / last`.
    pub fn outer(&self) -> usize {
        self.numel().checked_div(self.last()).unwrap_or(0)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.dims().iter().enumerate() {
            if i > 0 {
                f.write_str("×")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

/// Dense row-major `f64` array of rank ≤ 3.
///
/// Tensors are plain values; participation in a gradient tape is tracked by
/// [`Var`](super::Var) handles, not by the tensor itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: Shape::vector(data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: Shape::vector(data.len()), data }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Tensor { shape: Shape::matrix(rows, cols), data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(Shape::matrix(n, n));
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch { op: "reshape", left: self.shape, right: shape });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of the innermost axis.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape.last();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        // `v·0` is NaN exactly for non-finite `v`; independent lanes let the
        // scan vectorise instead of branching per element.
        let mut lanes = [0.0f64; 8];
        let chunks = self.data.chunks_exact(8);
        let tail = chunks.remainder();
        for c in chunks {
            for (l, v) in lanes.iter_mut().zip(c) {
                *l += v * 0.0;
            }
        }
        lanes.iter().chain(tail).all(|v| (v * 0.0) == 0.0)
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// `c = a·b (+ c if accumulate)` for row-major operands with explicit strides.
///
/// `a` is `m×k` with strides `(rsa, csa)`, `b` is `k×n` with `(rsb, csb)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    if m * k * n <= SMALL_GEMM {
        small_gemm(m, k, n, a, (rsa, csa), b, (rsb, csb), c, accumulate);
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address only elements inside `a`, `b` and `c`,
    // and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Below this many multiply-adds, packing overhead in the blocked kernel
/// outweighs its benefit (attention products are `M×d·d×M` per group).
const SMALL_GEMM: usize = 16 * 1024;

#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if !accumulate {
        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
    }
    if csb == 1 {
        // Rows of `b` are contiguous: axpy each into the output row.
        for i in 0..m {
            let out = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                let brow = &b[p * rsb..p * rsb + n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
    } else if rsb == 1 && csa == 1 {
        // Columns of `b` and rows of `a` are contiguous: dot products.
        for i in 0..m {
            let arow = &a[i * rsa..i * rsa + k];
            for j in 0..n {
                let bcol = &b[j * csb..j * csb + k];
                let mut acc = [0.0f64; 4];
                let (ac, bc) = (arow.chunks_exact(4), bcol.chunks_exact(4));
                let (at, bt) = (ac.remainder(), bc.remainder());
                for (x, y) in ac.zip(bc) {
                    for l in 0..4 {
                        acc[l] += x[l] * y[l];
                    }
                }
                let mut dot = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                for (x, y) in at.iter().zip(bt) {
                    dot += x * y;
                }
                c[i * n + j] += dot;
            }
        }
    } else {
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                for j in 0..n {
                    c[i * n + j] += aip * b[p * rsb + j * csb];
                }
            }
        }
    }
}

/// Plain matrix product `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.rank() != 2 || sb.rank() != 2 || sa.dims()[1] != sb.dims()[0] {
        return Err(Error::ShapeMismatch { op: "matmul", left: sa, right: sb });
    }
    let (m, k, n) = (sa.dims()[0], sa.dims()[1], sb.dims()[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, (k, 1), &b.data, (n, 1), &mut out, false);
    let t = Tensor::matrix(m, n, out);
    t.ensure_finite("matmul")?;
    Ok(t)
}

/// Masked row softmax in place. `keep == None` keeps every entry; masked
/// entries behave as `-inf` logits and come out as exact zeros.
pub(crate) fn softmax_row(row: &mut [f64], keep: Option<&[bool]>) {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if kept(j) && v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if kept(j) {
            *v = libm::exp(*v - max);
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Euclidean projection of `row` onto the probability simplex, in place.
///
/// Masked entries are first replaced by `(smallest kept logit) - 2`, which is
/// always below the threshold, so they come out as exact zeros. `scratch` is
/// reused across rows to avoid reallocating the sort buffer.
pub(crate) fn sparsemax_row(row: &mut [f64], keep: Option<&[bool]>, scratch: &mut Vec<f64>) {
    if let Some(keep) = keep {
        let floor = row
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(f64::INFINITY, f64::min);
        for (v, &k) in row.iter_mut().zip(keep) {
            if !k {
                *v = floor - 2.0;
            }
        }
    }
    scratch.clear();
    scratch.extend_from_slice(row);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));

    // Largest n with 1 + n·z̃ₙ > Σ_{k≤n} z̃ₖ; the sorted prefix condition is
    // monotone, so the last index that satisfies it is the support size.
    let mut cumsum = 0.0;
    let mut support = 0usize;
    let mut support_sum = 0.0;
    for (i, &v) in scratch.iter().enumerate() {
        cumsum += v;
        let n = (i + 1) as f64;
        if 1.0 + n * v > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    if support == 1 {
        let top = scratch[0];
        let mut placed = false;
        for v in row.iter_mut() {
            if !placed && *v == top {
                *v = 1.0;
                placed = true;
            } else {
                *v = 0.0;
            }
        }
        return;
    }
    let tau = (support_sum - 1.0) / support as f64;
    for v in row.iter_mut() {
        let p = *v - tau;
        *v = if p > 0.0 { p } else { 0.0 };
    }
}

/// Softmax along the innermost axis.
pub fn softmax_rows(z: &Tensor) -> Result<Tensor> {
    z.ensure_finite("softmax_rows")?;
    let mut out = z.clone();
    let n = z.shape().last();
    if n > 0 {
        for row in out.data.chunks_mut(n) {
            softmax_row(row, None);
        }
    }
    Ok(out)
}

/// Sparsemax (simplex projection) along the innermost axis.
pub fn sparsemax_rows(z: &Tensor) -> Result<Tensor> {
    z.ensure_finite("sparsemax_rows")?;
    let n = z.shape().last();
    if n == 0 {
        return Err(Error::ShapeMismatch { op: "sparsemax_rows", left: z.shape(), right: Shape::vector(1) });
    }
    let mut out = z.clone();
    let mut scratch = Vec::with_capacity(n);
    for row in out.data.chunks_mut(n) {
        sparsemax_row(row, None, &mut scratch);
    }
    Ok(out)
}

/// Vector-Jacobian product of sparsemax for one row, in place on `grad`:
/// on the support `S` of `out`, `g ← g - mean_S(g)`; zero elsewhere.
pub(crate) fn sparsemax_vjp_row(out: &[f64], grad: &mut [f64]) -> usize {
    let mut count = 0usize;
    let mut sum = 0.0;
    for (&p, &g) in out.iter().zip(grad.iter()) {
        if p > 0.0 {
            count += 1;
            sum += g;
        }
    }
    if count == 0 {
        return 0;
    }
    let mean = sum / count as f64;
    for (&p, g) in out.iter().zip(grad.iter_mut()) {
        *g = if p > 0.0 { *g - mean } else { 0.0 };
    }
    count
}

/// Gradient of a loss with respect to a sparsemax input row, given the
/// forward output `row_out` and the upstream gradient.
pub fn sparsemax_backward(row_out: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if row_out.shape() != upstream.shape() || row_out.shape().rank() != 1 {
        return Err(Error::ShapeMismatch {
            op: "sparsemax_backward",
            left: row_out.shape(),
            right: upstream.shape(),
        });
    }
    let mut g = upstream.clone();
    if sparsemax_vjp_row(row_out.data(), &mut g.data) == 0 {
        return Err(Error::EmptySupport);
    }
    Ok(g)
}

/// Vector-Jacobian product of softmax for one row, in place on `grad`.
pub(crate) fn softmax_vjp_row(out: &[f64], grad: &mut [f64]) {
    let dot: f64 = out.iter().zip(grad.iter()).map(|(p, g)| p * g).sum();
    for (&p, g) in out.iter().zip(grad.iter_mut()) {
        *g = p * (*g - dot);
    }
}
