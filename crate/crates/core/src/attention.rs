//! Entity embedding and single-layer self-attention with two heads.
//!
//! Both heads read the same logits `Q·Kᵀ/√d_X` computed from one shared set
//! of projections; the dense head normalises them with softmax, the sparse
//! head with sparsemax. Keys of absent entities are excluded from both.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{uniform_init, Parameters, Shape, Tape, Tensor, Var};

/// One agent's observation: `M` entity rows of width `d_E`, self first.
#[derive(Clone, Debug, PartialEq)]
pub struct EntitySet {
    entities: Tensor,
    alive: Vec<bool>,
}

impl EntitySet {
    pub fn new(entities: Tensor, alive: Vec<bool>) -> Result<Self> {
        let s = entities.shape();
        if s.rank() != 2 || s.dims()[0] == 0 || s.dims()[0] != alive.len() {
            return Err(Error::ShapeMismatch { op: "entity_set", left: s, right: Shape::vector(alive.len()) });
        }
        entities.ensure_finite("entity_set")?;
        Ok(EntitySet { entities, alive })
    }

    pub fn entities(&self) -> &Tensor {
        &self.entities
    }

    pub fn alive_mask(&self) -> &[bool] {
        &self.alive
    }

    pub fn num_entities(&self) -> usize {
        self.alive.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.entities.shape().dims()[1]
    }

    /// Entities that may be attended to. The self row is always included, so
    /// every row of attention weights has a non-empty support.
    pub fn key_mask(&self) -> Vec<bool> {
        let mut keep = self.alive.clone();
        keep[0] = true;
        keep
    }

    pub fn visible_count(&self) -> usize {
        self.key_mask().iter().filter(|&&k| k).count()
    }
}

/// Embedding `f(·)` and the shared projections `W_Q`, `W_K`, `W_V`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl AttentionParams {
    pub fn zeros(entity_dim: usize, embed_dim: usize) -> Self {
        let sq = Tensor::zeros(Shape::matrix(embed_dim, embed_dim));
        AttentionParams {
            embed_w: Tensor::zeros(Shape::matrix(entity_dim, embed_dim)),
            embed_b: Tensor::zeros(Shape::vector(embed_dim)),
            w_q: sq.clone(),
            w_k: sq.clone(),
            w_v: sq,
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, entity_dim: usize, embed_dim: usize) -> Self {
        AttentionParams {
            embed_w: uniform_init(rng, Shape::matrix(entity_dim, embed_dim), entity_dim),
            embed_b: uniform_init(rng, Shape::vector(embed_dim), entity_dim),
            w_q: uniform_init(rng, Shape::matrix(embed_dim, embed_dim), embed_dim),
            w_k: uniform_init(rng, Shape::matrix(embed_dim, embed_dim), embed_dim),
            w_v: uniform_init(rng, Shape::matrix(embed_dim, embed_dim), embed_dim),
        }
    }

    pub fn entity_dim(&self) -> usize {
        self.embed_w.shape().dims()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_w.shape().dims()[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> AttentionVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        AttentionVars {
            embed_w: put(&self.embed_w),
            embed_b: put(&self.embed_b),
            w_q: put(&self.w_q),
            w_k: put(&self.w_k),
            w_v: put(&self.w_v),
        }
    }
}

impl Parameters for AttentionParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f("embed_w", &self.embed_w);
        f("embed_b", &self.embed_b);
        f("w_q", &self.w_q);
        f("w_k", &self.w_k);
        f("w_v", &self.w_v);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("embed_w", &mut self.embed_w);
        f("embed_b", &mut self.embed_b);
        f("w_q", &mut self.w_q);
        f("w_k", &mut self.w_k);
        f("w_v", &mut self.w_v);
    }
}

/// [`AttentionParams`] bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl AttentionVars {
    pub fn all(&self) -> Vec<Var> {
        alloc::vec![self.embed_w, self.embed_b, self.w_q, self.w_k, self.w_v]
    }

    /// `[R·M × d_E] → [R·M × d_X]`, one affine map per entity row.
    pub fn embed(&self, tape: &mut Tape, obs: Var) -> Result<Var> {
        tape.affine(obs, self.embed_w, self.embed_b)
    }

    /// Projects `[R·M × d_X]` embeddings to `Q`, `K`, `V`, each `[R×M×d_X]`.
    pub fn project(&self, tape: &mut Tape, x: Var, groups: usize, entities: usize) -> Result<(Var, Var, Var)> {
        let d = tape.shape(x).last();
        let shape = Shape::rank3(groups, entities, d);
        let q = tape.matmul(x, self.w_q)?;
        let k = tape.matmul(x, self.w_k)?;
        let v = tape.matmul(x, self.w_v)?;
        Ok((tape.reshape(q, shape)?, tape.reshape(k, shape)?, tape.reshape(v, shape)?))
    }
}

/// Scaled attention logits `Q·Kᵀ/√d_X`, `[R×M×M]`.
pub fn logits(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let d = tape.shape(q).last();
    if d == 0 {
        return Err(Error::ShapeMismatch { op: "attention", left: tape.shape(q), right: tape.shape(k) });
    }
    let z = tape.bmm(q, k, true)?;
    tape.scale(z, 1.0 / libm::sqrt(d as f64))
}

/// Softmax head. Returns `(output [R×M×d_X], weights [R×M×M])`.
pub fn dense_head(tape: &mut Tape, logits: Var, v: Var, keep: Option<&[bool]>) -> Result<(Var, Var)> {
    let p = tape.softmax(logits, keep)?;
    Ok((tape.bmm(p, v, false)?, p))
}

/// Sparsemax head. Returns `(output [R×M×d_X], weights [R×M×M])`.
pub fn sparse_head(tape: &mut Tape, logits: Var, v: Var, keep: Option<&[bool]>) -> Result<(Var, Var)> {
    let p = tape.sparsemax(logits, keep)?;
    Ok((tape.bmm(p, v, false)?, p))
}

/// Attention output together with its `M×M` weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Attended {
    pub output: Tensor,
    pub weights: Tensor,
}

/// Embeds every entity row; absent entities are zero rows and so map to the bias.
pub fn embed_entities(obs: &EntitySet, params: &AttentionParams) -> Result<Tensor> {
    if obs.feature_dim() != params.entity_dim() {
        return Err(Error::ShapeMismatch { op: "embed_entities", left: obs.entities.shape(), right: params.embed_w.shape() });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let o = tape.constant(obs.entities.clone());
    let x = vars.embed(&mut tape, o)?;
    Ok(tape.value(x).clone())
}

/// `(X·W_Q, X·W_K, X·W_V)` for an `M×d_X` embedding matrix.
pub fn project_qkv(x: &Tensor, params: &AttentionParams) -> Result<(Tensor, Tensor, Tensor)> {
    let s = x.shape();
    if s.rank() != 2 || s.dims()[1] != params.embed_dim() {
        return Err(Error::ShapeMismatch { op: "project_qkv", left: s, right: params.w_q.shape() });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let (q, k, v) = vars.project(&mut tape, xv, 1, s.dims()[0])?;
    let m = Shape::matrix(s.dims()[0], s.dims()[1]);
    Ok((
        tape.value(q).clone().reshape(m)?,
        tape.value(k).clone().reshape(m)?,
        tape.value(v).clone().reshape(m)?,
    ))
}

fn attend(q: &Tensor, k: &Tensor, v: &Tensor, keep: Option<&[bool]>, sparse: bool) -> Result<Attended> {
    let (sq, sk, sv) = (q.shape(), k.shape(), v.shape());
    if sq.rank() != 2 || sq != sk || sq != sv {
        return Err(Error::ShapeMismatch { op: "attention", left: sq, right: sk });
    }
    let (m, d) = (sq.dims()[0], sq.dims()[1]);
    let cube = Shape::rank3(1, m, d);
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone().reshape(cube)?);
    let kv = tape.constant(k.clone().reshape(cube)?);
    let vv = tape.constant(v.clone().reshape(cube)?);
    let z = logits(&mut tape, qv, kv)?;
    let (y, p) = if sparse { sparse_head(&mut tape, z, vv, keep)? } else { dense_head(&mut tape, z, vv, keep)? };
    Ok(Attended {
        output: tape.value(y).clone().reshape(Shape::matrix(m, d))?,
        weights: tape.value(p).clone().reshape(Shape::matrix(m, m))?,
    })
}

/// `softmax(Q·Kᵀ/√d_X)·V`, with masked keys receiving zero weight.
pub fn attend_dense(q: &Tensor, k: &Tensor, v: &Tensor, keep: Option<&[bool]>) -> Result<Attended> {
    attend(q, k, v, keep, false)
}

/// `sparsemax(Q·Kᵀ/√d_X)·V`, with masked keys receiving zero weight.
pub fn attend_sparse(q: &Tensor, k: &Tensor, v: &Tensor, keep: Option<&[bool]>) -> Result<Attended> {
    attend(q, k, v, keep, true)
}
