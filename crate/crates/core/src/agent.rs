//! Per-agent utility network and ε-greedy action selection.
//!
//! ```text
//! X      = f(O)                          embedded entities, M×d_X
//! h'     = GRU(mean(X), h)
//! Y_d    = softmax(QKᵀ/√d_X)·V           Y_s = sparsemax(QKᵀ/√d_X)·V
//! q_d    = head(mean(Y_d) ⊕ h')          q_s = head(mean(Y_s) ⊕ h')
//! ```
//!
//! The two heads share every parameter, including the output layer; they
//! differ only in the normalisation of the attention logits.

use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{self, AttentionParams, AttentionVars, EntitySet};
use crate::error::{Error, Result};
use crate::numerics::{gru_step, join_name, uniform_init, GruParams, GruVars, Parameters, Shape, Tape, Tensor, Var};

/// Network sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentDims {
    pub entity_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_actions: usize,
}

/// Parameters θ_π of the shared agent network.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub attention: AttentionParams,
    pub gru: GruParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl AgentParams {
    pub fn zeros(dims: AgentDims) -> Self {
        AgentParams {
            attention: AttentionParams::zeros(dims.entity_dim, dims.embed_dim),
            gru: GruParams::zeros(dims.embed_dim, dims.hidden_dim),
            head_w: Tensor::zeros(Shape::matrix(dims.embed_dim + dims.hidden_dim, dims.n_actions)),
            head_b: Tensor::zeros(Shape::vector(dims.n_actions)),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, dims: AgentDims) -> Self {
        let fan_in = dims.embed_dim + dims.hidden_dim;
        AgentParams {
            attention: AttentionParams::init(rng, dims.entity_dim, dims.embed_dim),
            gru: GruParams::init(rng, dims.embed_dim, dims.hidden_dim),
            head_w: uniform_init(rng, Shape::matrix(fan_in, dims.n_actions), fan_in),
            head_b: uniform_init(rng, Shape::vector(dims.n_actions), fan_in),
        }
    }

    pub fn dims(&self) -> AgentDims {
        AgentDims {
            entity_dim: self.attention.entity_dim(),
            embed_dim: self.attention.embed_dim(),
            hidden_dim: self.gru.hidden_dim(),
            n_actions: self.head_b.len(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> AgentVars {
        let attention = self.attention.bind(tape, trainable);
        let gru = self.gru.bind(tape, trainable);
        let (head_w, head_b) = if trainable {
            (tape.leaf(self.head_w.clone()), tape.leaf(self.head_b.clone()))
        } else {
            (tape.constant(self.head_w.clone()), tape.constant(self.head_b.clone()))
        };
        AgentVars { attention, gru, head_w, head_b }
    }
}

impl Parameters for AgentParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.attention.visit(&mut |n, t| f(&join_name("attention", n), t));
        self.gru.visit(&mut |n, t| f(&join_name("gru", n), t));
        f("head_w", &self.head_w);
        f("head_b", &self.head_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.attention.visit_mut(&mut |n, t| f(&join_name("attention", n), t));
        self.gru.visit_mut(&mut |n, t| f(&join_name("gru", n), t));
        f("head_w", &mut self.head_w);
        f("head_b", &mut self.head_b);
    }
}

/// Which Q-heads to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    Both,
    DenseOnly,
    SparseOnly,
}

impl Heads {
    pub fn dense(self) -> bool {
        self != Heads::SparseOnly
    }

    pub fn sparse(self) -> bool {
        self != Heads::DenseOnly
    }
}

/// Tape outputs of one batched agent step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub q_dense: Option<Var>,
    pub q_sparse: Option<Var>,
    pub h_next: Var,
    pub dense_weights: Option<Var>,
    pub sparse_weights: Option<Var>,
}

/// [`AgentParams`] bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct AgentVars {
    pub attention: AttentionVars,
    pub gru: GruVars,
    pub head_w: Var,
    pub head_b: Var,
}

impl AgentVars {
    /// Variables in [`Parameters`] traversal order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.attention.all();
        v.extend(self.gru.all());
        v.push(self.head_w);
        v.push(self.head_b);
        v
    }

    /// One step for `rows` observations of `entities` entities each.
    ///
    /// `obs` is `[rows·entities × d_E]`, `keep` the `[rows·entities]` key
    /// mask, `h_prev` is `[rows × d_H]`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        obs: Var,
        keep: &[bool],
        rows: usize,
        entities: usize,
        h_prev: Var,
        heads: Heads,
    ) -> Result<StepVars> {
        let enc = self.encode(tape, obs, keep, rows, entities, heads)?;
        let h_next = gru_step(tape, &self.gru, enc.pooled_x, h_prev)?;
        let mut out = StepVars {
            q_dense: None,
            q_sparse: None,
            h_next,
            dense_weights: enc.dense_weights,
            sparse_weights: enc.sparse_weights,
        };
        if let Some(y) = enc.pooled_dense {
            out.q_dense = Some(self.q_values(tape, y, h_next)?);
        }
        if let Some(y) = enc.pooled_sparse {
            out.q_sparse = Some(self.q_values(tape, y, h_next)?);
        }
        Ok(out)
    }

    /// Everything in a step that does not depend on the recurrent state,
    /// for `rows` independent observations at once.
    pub fn encode(
        &self,
        tape: &mut Tape,
        obs: Var,
        keep: &[bool],
        rows: usize,
        entities: usize,
        heads: Heads,
    ) -> Result<Encoded> {
        if keep.len() != rows * entities || tape.shape(obs).dims().first() != Some(&(rows * entities)) {
            return Err(Error::ShapeMismatch {
                op: "agent_step",
                left: tape.shape(obs),
                right: Shape::matrix(rows, entities),
            });
        }
        let x = self.attention.embed(tape, obs)?;
        let d_x = tape.shape(x).last();
        let x3 = tape.reshape(x, Shape::rank3(rows, entities, d_x))?;
        let pooled_x = tape.mean_axis1(x3)?;

        let (q, k, v) = self.attention.project(tape, x, rows, entities)?;
        let z = attention::logits(tape, q, k)?;

        let mut out =
            Encoded { pooled_x, pooled_dense: None, pooled_sparse: None, dense_weights: None, sparse_weights: None };
        if heads.dense() {
            let p = tape.softmax(z, Some(keep))?;
            out.pooled_dense = Some(pooled_output(tape, p, v)?);
            out.dense_weights = Some(p);
        }
        if heads.sparse() {
            let p = tape.sparsemax(z, Some(keep))?;
            out.pooled_sparse = Some(pooled_output(tape, p, v)?);
            out.sparse_weights = Some(p);
        }
        Ok(out)
    }

    /// Output layer: `head(pooled ⊕ h)` → `[rows × U]`.
    pub fn q_values(&self, tape: &mut Tape, pooled: Var, h: Var) -> Result<Var> {
        let joint = tape.concat_cols(pooled, h)?;
        tape.affine(joint, self.head_w, self.head_b)
    }
}

/// Row mean of the attention output `P·V`, computed as `mean(P)·V` so the
/// full `[R×M×d_X]` output is never formed.
fn pooled_output(tape: &mut Tape, p: Var, v: Var) -> Result<Var> {
    let (rows, m, d) = {
        let s = tape.shape(v);
        (s.dims()[0], s.dims()[1], s.dims()[2])
    };
    let p_mean = tape.mean_axis1(p)?;
    let p_mean = tape.reshape(p_mean, Shape::rank3(rows, 1, m))?;
    let y = tape.bmm(p_mean, v, false)?;
    tape.reshape(y, Shape::matrix(rows, d))
}

/// Tape outputs of [`AgentVars::encode`]; pooled tensors are `[rows × d_X]`,
/// weights `[rows × M × M]`.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub pooled_x: Var,
    pub pooled_dense: Option<Var>,
    pub pooled_sparse: Option<Var>,
    pub dense_weights: Option<Var>,
    pub sparse_weights: Option<Var>,
}

/// Result of [`agent_step`] for a single agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStep {
    pub q_dense: Vec<f64>,
    pub q_sparse: Vec<f64>,
    pub h_next: Tensor,
    pub dense_weights: Tensor,
    pub sparse_weights: Tensor,
}

/// Forward pass for one agent observation and hidden state.
pub fn agent_step(obs: &EntitySet, h_prev: &Tensor, params: &AgentParams) -> Result<AgentStep> {
    let dims = params.dims();
    if obs.feature_dim() != dims.entity_dim || h_prev.len() != dims.hidden_dim {
        return Err(Error::ShapeMismatch {
            op: "agent_step",
            left: obs.entities().shape(),
            right: h_prev.shape(),
        });
    }
    let m = obs.num_entities();
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let o = tape.constant(obs.entities().clone());
    let h = tape.constant(h_prev.clone().reshape(Shape::matrix(1, dims.hidden_dim))?);
    let out = vars.step(&mut tape, o, &obs.key_mask(), 1, m, h, Heads::Both)?;
    let take = |v: Option<Var>| tape.value(v.expect("both heads evaluated")).clone();
    Ok(AgentStep {
        q_dense: take(out.q_dense).into_data(),
        q_sparse: take(out.q_sparse).into_data(),
        h_next: tape.value(out.h_next).clone().reshape(Shape::vector(dims.hidden_dim))?,
        dense_weights: take(out.dense_weights).reshape(Shape::matrix(m, m))?,
        sparse_weights: take(out.sparse_weights).reshape(Shape::matrix(m, m))?,
    })
}

/// Index of the largest `q` among available actions; ties go to the lowest index.
pub fn greedy_action(q: &[f64], avail: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoAvailableAction)
}

/// ε-greedy over available actions.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], avail: &[bool], epsilon: f64, rng: &mut R) -> Result<usize> {
    let count = avail.iter().filter(|&&a| a).count();
    if count == 0 || q.len() != avail.len() {
        return Err(Error::NoAvailableAction);
    }
    if rng.gen::<f64>() < epsilon {
        let pick = rng.gen_range(0..count);
        return Ok(avail.iter().enumerate().filter(|(_, &a)| a).nth(pick).map(|(i, _)| i).unwrap());
    }
    greedy_action(q, avail)
}

/// Linear ε decay from `start` to `finish` over `anneal_steps` env steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub finish: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, finish: 0.05, anneal_steps: 50_000 }
    }
}

pub fn epsilon_at(step: u64, schedule: &EpsilonSchedule) -> f64 {
    if schedule.anneal_steps == 0 || step >= schedule.anneal_steps {
        return schedule.finish;
    }
    let frac = step as f64 / schedule.anneal_steps as f64;
    schedule.start + (schedule.finish - schedule.start) * frac
}
