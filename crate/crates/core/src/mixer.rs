//! Mixing networks that combine per-agent utilities into a joint value.
//!
//! * additive: `Q_tot = Σᵢ Qᵢ`
//! * monotonic: a two-layer network whose weights are generated from the
//!   global state by hypernetworks and passed through `|·|`, so that
//!   `∂Q_tot/∂Qᵢ ≥ 0`:
//!
//! ```text
//! hidden = elu(q·|W₁(s)| + b₁(s))
//! Q_tot  = hidden·|W₂(s)| + V(s),   V(s) = relu(s·A + a)·B + b
//! ```

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{uniform_init, Parameters, Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerKind {
    Additive,
    Monotonic,
}

/// Hypernetwork parameters of the monotonic mixer.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicParams {
    pub hyper_w1: Tensor,
    pub hyper_w1_b: Tensor,
    pub hyper_b1: Tensor,
    pub hyper_b1_b: Tensor,
    pub hyper_w2: Tensor,
    pub hyper_w2_b: Tensor,
    pub value_w1: Tensor,
    pub value_b1: Tensor,
    pub value_w2: Tensor,
    pub value_b2: Tensor,
}

impl MonotonicParams {
    pub fn zeros(n_agents: usize, state_dim: usize, embed_dim: usize) -> Self {
        let z = |m: usize, n: usize| Tensor::zeros(Shape::matrix(m, n));
        let zv = |n: usize| Tensor::zeros(Shape::vector(n));
        MonotonicParams {
            hyper_w1: z(state_dim, n_agents * embed_dim),
            hyper_w1_b: zv(n_agents * embed_dim),
            hyper_b1: z(state_dim, embed_dim),
            hyper_b1_b: zv(embed_dim),
            hyper_w2: z(state_dim, embed_dim),
            hyper_w2_b: zv(embed_dim),
            value_w1: z(state_dim, embed_dim),
            value_b1: zv(embed_dim),
            value_w2: z(embed_dim, 1),
            value_b2: zv(1),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, n_agents: usize, state_dim: usize, embed_dim: usize) -> Self {
        let mut p = Self::zeros(n_agents, state_dim, embed_dim);
        p.visit_mut(&mut |name, t| {
            let fan_in = if name.starts_with("value_w2") || name == "value_b2" { embed_dim } else { state_dim };
            *t = uniform_init(rng, t.shape(), fan_in);
        });
        p
    }

    pub fn n_agents(&self) -> usize {
        self.hyper_w1.shape().dims()[1] / self.embed_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.hyper_w1.shape().dims()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.hyper_b1.shape().dims()[1]
    }
}

impl Parameters for MonotonicParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f("hyper_w1", &self.hyper_w1);
        f("hyper_w1_b", &self.hyper_w1_b);
        f("hyper_b1", &self.hyper_b1);
        f("hyper_b1_b", &self.hyper_b1_b);
        f("hyper_w2", &self.hyper_w2);
        f("hyper_w2_b", &self.hyper_w2_b);
        f("value_w1", &self.value_w1);
        f("value_b1", &self.value_b1);
        f("value_w2", &self.value_w2);
        f("value_b2", &self.value_b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("hyper_w1", &mut self.hyper_w1);
        f("hyper_w1_b", &mut self.hyper_w1_b);
        f("hyper_b1", &mut self.hyper_b1);
        f("hyper_b1_b", &mut self.hyper_b1_b);
        f("hyper_w2", &mut self.hyper_w2);
        f("hyper_w2_b", &mut self.hyper_w2_b);
        f("value_w1", &mut self.value_w1);
        f("value_b1", &mut self.value_b1);
        f("value_w2", &mut self.value_w2);
        f("value_b2", &mut self.value_b2);
    }
}

/// Parameters θ_ρ of a mixer.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum MixerParams {
    Additive,
    Monotonic(MonotonicParams),
}

impl MixerParams {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        kind: MixerKind,
        n_agents: usize,
        state_dim: usize,
        embed_dim: usize,
    ) -> Self {
        match kind {
            MixerKind::Additive => MixerParams::Additive,
            MixerKind::Monotonic => MixerParams::Monotonic(MonotonicParams::init(rng, n_agents, state_dim, embed_dim)),
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            MixerParams::Additive => MixerKind::Additive,
            MixerParams::Monotonic(_) => MixerKind::Monotonic,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MixerVars {
        match self {
            MixerParams::Additive => MixerVars::Additive,
            MixerParams::Monotonic(p) => {
                let mut put =
                    |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                MixerVars::Monotonic(MonotonicVars {
                    hyper_w1: put(&p.hyper_w1),
                    hyper_w1_b: put(&p.hyper_w1_b),
                    hyper_b1: put(&p.hyper_b1),
                    hyper_b1_b: put(&p.hyper_b1_b),
                    hyper_w2: put(&p.hyper_w2),
                    hyper_w2_b: put(&p.hyper_w2_b),
                    value_w1: put(&p.value_w1),
                    value_b1: put(&p.value_b1),
                    value_w2: put(&p.value_w2),
                    value_b2: put(&p.value_b2),
                    embed_dim: p.embed_dim(),
                })
            }
        }
    }
}

impl Parameters for MixerParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        if let MixerParams::Monotonic(p) = self {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let MixerParams::Monotonic(p) = self {
            p.visit_mut(f);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MonotonicVars {
    pub hyper_w1: Var,
    pub hyper_w1_b: Var,
    pub hyper_b1: Var,
    pub hyper_b1_b: Var,
    pub hyper_w2: Var,
    pub hyper_w2_b: Var,
    pub value_w1: Var,
    pub value_b1: Var,
    pub value_w2: Var,
    pub value_b2: Var,
    embed_dim: usize,
}

/// [`MixerParams`] bound to a tape.
#[derive(Clone, Copy, Debug)]
pub enum MixerVars {
    Additive,
    Monotonic(MonotonicVars),
}

impl MixerVars {
    /// Variables in [`Parameters`] traversal order.
    pub fn all(&self) -> Vec<Var> {
        match self {
            MixerVars::Additive => Vec::new(),
            MixerVars::Monotonic(p) => alloc::vec![
                p.hyper_w1,
                p.hyper_w1_b,
                p.hyper_b1,
                p.hyper_b1_b,
                p.hyper_w2,
                p.hyper_w2_b,
                p.value_w1,
                p.value_b1,
                p.value_w2,
                p.value_b2,
            ],
        }
    }

    /// Joint values `[B]` from utilities `[B×N]` and states `[B×S]`.
    pub fn mix(&self, tape: &mut Tape, utilities: Var, state: Var) -> Result<Var> {
        let su = tape.shape(utilities);
        if su.rank() != 2 || su.dims()[1] == 0 {
            return Err(Error::ShapeMismatch { op: "mix", left: su, right: tape.shape(state) });
        }
        let (b, n) = (su.dims()[0], su.dims()[1]);
        match self {
            MixerVars::Additive => {
                let ones = tape.constant(Tensor::full(Shape::matrix(n, 1), 1.0));
                let total = tape.matmul(utilities, ones)?;
                tape.reshape(total, Shape::vector(b))
            }
            MixerVars::Monotonic(p) => {
                let ss = tape.shape(state);
                let s_dim = tape.shape(p.hyper_w1).dims()[0];
                let n_expected = tape.shape(p.hyper_w1).dims()[1] / p.embed_dim;
                if ss.rank() != 2 || ss.dims()[0] != b || ss.dims()[1] != s_dim || n != n_expected {
                    return Err(Error::ShapeMismatch { op: "mix", left: su, right: ss });
                }
                let d = p.embed_dim;
                let w1 = tape.affine(state, p.hyper_w1, p.hyper_w1_b)?;
                let w1 = tape.abs(w1)?;
                let w1 = tape.reshape(w1, Shape::rank3(b, n, d))?;
                let b1 = tape.affine(state, p.hyper_b1, p.hyper_b1_b)?;
                let q = tape.reshape(utilities, Shape::rank3(b, 1, n))?;
                let hidden = tape.bmm(q, w1, false)?;
                let hidden = tape.reshape(hidden, Shape::matrix(b, d))?;
                let hidden = tape.add(hidden, b1)?;
                let hidden = tape.elu(hidden)?;

                let w2 = tape.affine(state, p.hyper_w2, p.hyper_w2_b)?;
                let w2 = tape.abs(w2)?;
                let w2 = tape.reshape(w2, Shape::rank3(b, d, 1))?;
                let hidden = tape.reshape(hidden, Shape::rank3(b, 1, d))?;
                let y = tape.bmm(hidden, w2, false)?;
                let y = tape.reshape(y, Shape::vector(b))?;

                let v = tape.affine(state, p.value_w1, p.value_b1)?;
                let v = tape.relu(v)?;
                let v = tape.affine(v, p.value_w2, p.value_b2)?;
                let v = tape.reshape(v, Shape::vector(b))?;
                tape.add(y, v)
            }
        }
    }
}

/// Joint value for a single state.
pub fn mix(utilities: &[f64], state: &Tensor, params: &MixerParams) -> Result<f64> {
    if utilities.is_empty() {
        return Err(Error::ShapeMismatch { op: "mix", left: Shape::vector(0), right: state.shape() });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let u = tape.constant(Tensor::matrix(1, utilities.len(), utilities.to_vec()));
    let s = tape.constant(state.clone().reshape(Shape::matrix(1, state.len()))?);
    let out = vars.mix(&mut tape, u, s)?;
    Ok(tape.value(out).item())
}

/// Forward difference `(mix(u + δ·eᵢ) − mix(u)) / δ`.
///
/// The additive mixer is linear, so its difference is evaluated as
/// `mix(δ·eᵢ)`; subtracting two large sums would lose the low bits of δ.
pub fn monotonicity_probe(params: &MixerParams, state: &Tensor, utilities: &[f64], agent: usize, delta: f64) -> Result<f64> {
    if agent >= utilities.len() {
        return Err(Error::ShapeMismatch { op: "monotonicity_probe", left: Shape::vector(utilities.len()), right: Shape::vector(agent) });
    }
    if let MixerParams::Additive = params {
        let mut bump = alloc::vec![0.0; utilities.len()];
        bump[agent] = delta;
        return Ok(mix(&bump, state, params)? / delta);
    }
    let base = mix(utilities, state, params)?;
    let mut bumped = utilities.to_vec();
    bumped[agent] += delta;
    Ok((mix(&bumped, state, params)? - base) / delta)
}
