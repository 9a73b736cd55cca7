//! Gated recurrent unit.
//!
//! ```text
//! r  = σ(x·W_r + h·U_r + b_r)
//! u  = σ(x·W_u + h·U_u + b_u)
//! h̃  = tanh(x·W_h + (r∘h)·U_h + b_h)
//! h' = (1 − u)∘h + u∘h̃
//! ```

use alloc::vec::Vec;

use rand::Rng;

use super::params::{uniform_init, Parameters};
use super::{Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_r: Tensor,
    pub w_u: Tensor,
    pub w_h: Tensor,
    pub u_r: Tensor,
    pub u_u: Tensor,
    pub u_h: Tensor,
    pub b_r: Tensor,
    pub b_u: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(Shape::matrix(input, hidden));
        let u = Tensor::zeros(Shape::matrix(hidden, hidden));
        let b = Tensor::zeros(Shape::vector(hidden));
        GruParams {
            w_r: w.clone(),
            w_u: w.clone(),
            w_h: w,
            u_r: u.clone(),
            u_u: u.clone(),
            u_h: u,
            b_r: b.clone(),
            b_u: b.clone(),
            b_h: b,
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let mut p = Self::zeros(input, hidden);
        p.visit_mut(&mut |_, t| *t = uniform_init(rng, t.shape(), hidden));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.shape().dims()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.shape().dims()[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GruVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        GruVars {
            w_r: put(&self.w_r),
            w_u: put(&self.w_u),
            w_h: put(&self.w_h),
            u_r: put(&self.u_r),
            u_u: put(&self.u_u),
            u_h: put(&self.u_h),
            b_r: put(&self.b_r),
            b_u: put(&self.b_u),
            b_h: put(&self.b_h),
        }
    }
}

impl Parameters for GruParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f("w_r", &self.w_r);
        f("w_u", &self.w_u);
        f("w_h", &self.w_h);
        f("u_r", &self.u_r);
        f("u_u", &self.u_u);
        f("u_h", &self.u_h);
        f("b_r", &self.b_r);
        f("b_u", &self.b_u);
        f("b_h", &self.b_h);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w_r", &mut self.w_r);
        f("w_u", &mut self.w_u);
        f("w_h", &mut self.w_h);
        f("u_r", &mut self.u_r);
        f("u_u", &mut self.u_u);
        f("u_h", &mut self.u_h);
        f("b_r", &mut self.b_r);
        f("b_u", &mut self.b_u);
        f("b_h", &mut self.b_h);
    }
}

/// [`GruParams`] bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_r: Var,
    pub w_u: Var,
    pub w_h: Var,
    pub u_r: Var,
    pub u_u: Var,
    pub u_h: Var,
    pub b_r: Var,
    pub b_u: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn all(&self) -> Vec<Var> {
        alloc::vec![self.w_r, self.w_u, self.w_h, self.u_r, self.u_u, self.u_h, self.b_r, self.b_u, self.b_h]
    }
}

/// One GRU update for a batch of rows: `x[R×d_in]`, `h[R×d_h]` → `[R×d_h]`.
pub fn gru_step(tape: &mut Tape, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let (sx, sh) = (tape.shape(x), tape.shape(h));
    let d_h = tape.shape(p.u_r).dims()[0];
    if sx.rank() != 2 || sh.rank() != 2 || sx.dims()[0] != sh.dims()[0] || sh.dims()[1] != d_h {
        return Err(Error::ShapeMismatch { op: "gru_cell", left: sx, right: sh });
    }
    let xr = tape.affine(x, p.w_r, p.b_r)?;
    let hr = tape.matmul(h, p.u_r)?;
    let r_pre = tape.add(xr, hr)?;
    let r = tape.sigmoid(r_pre)?;

    let xu = tape.affine(x, p.w_u, p.b_u)?;
    let hu = tape.matmul(h, p.u_u)?;
    let u_pre = tape.add(xu, hu)?;
    let u = tape.sigmoid(u_pre)?;

    let xh = tape.affine(x, p.w_h, p.b_h)?;
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, p.u_h)?;
    let c_pre = tape.add(xh, rhu)?;
    let candidate = tape.tanh(c_pre)?;

    // (1 − u)∘h + u∘h̃ = h + u∘(h̃ − h)
    let delta = tape.sub(candidate, h)?;
    let step = tape.mul(u, delta)?;
    tape.add(h, step)
}

/// Forward-only GRU update for a single input vector.
pub fn gru_cell(x: &Tensor, h_prev: &Tensor, params: &GruParams) -> Result<Tensor> {
    let (d_in, d_h) = (params.input_dim(), params.hidden_dim());
    if x.len() != d_in || x.shape().rank() > 1 {
        return Err(Error::ShapeMismatch { op: "gru_cell", left: x.shape(), right: Shape::vector(d_in) });
    }
    if h_prev.len() != d_h || h_prev.shape().rank() > 1 {
        return Err(Error::ShapeMismatch { op: "gru_cell", left: h_prev.shape(), right: Shape::vector(d_h) });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let xv = tape.constant(x.clone().reshape(Shape::matrix(1, d_in))?);
    let hv = tape.constant(h_prev.clone().reshape(Shape::matrix(1, d_h))?);
    let out = gru_step(&mut tape, &vars, xv, hv)?;
    tape.value(out).clone().reshape(Shape::vector(d_h))
}
