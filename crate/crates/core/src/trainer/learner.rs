use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::buffer::{EpisodeBatch, EpisodeDims};
use super::config::{Ablation, Head, TrainConfig};
use crate::agent::{AgentDims, AgentParams, AgentVars, Heads};
use crate::error::{Error, Result};
use crate::mixer::{MixerParams, MixerVars};
use crate::numerics::{clip_grad_norm, gru_step, join_name, Optimizer, Parameters, Shape, Tape, Tensor, Var};

/// All trainable parameters: the shared agent network θ_π, the mixer θ_ρ
/// and, optionally, a separate mixer for the auxiliary loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub agent: AgentParams,
    pub mixer: MixerParams,
    pub aux_mixer: Option<MixerParams>,
}

impl Network {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, config: &TrainConfig) -> Self {
        let env = &config.env;
        let dims = AgentDims {
            entity_dim: env.entity_dim(),
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            n_actions: env.n_actions(),
        };
        let agent = AgentParams::init(rng, dims);
        let (n, s, d) = (env.n_allies, env.state_dim(), config.mixing_embed_dim);
        let mixer = MixerParams::init(rng, config.mixer, n, s, d);
        let aux_mixer = config.has_aux_mixer().then(|| MixerParams::init(rng, config.mixer, n, s, d));
        Network { agent, mixer, aux_mixer }
    }

    /// Mixer used for a head's loss: the auxiliary copy for the sparse head
    /// when one exists, otherwise the main mixer.
    pub fn mixer_for(&self, head: Head) -> &MixerParams {
        match (head, &self.aux_mixer) {
            (Head::Sparse, Some(aux)) => aux,
            _ => &self.mixer,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> NetworkVars {
        NetworkVars {
            agent: self.agent.bind(tape, trainable),
            mixer: self.mixer.bind(tape, trainable),
            aux_mixer: self.aux_mixer.as_ref().map(|m| m.bind(tape, trainable)),
        }
    }
}

impl Parameters for Network {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.agent.visit(&mut |n, t| f(&join_name("agent", n), t));
        self.mixer.visit(&mut |n, t| f(&join_name("mixer", n), t));
        if let Some(aux) = &self.aux_mixer {
            aux.visit(&mut |n, t| f(&join_name("aux_mixer", n), t));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.agent.visit_mut(&mut |n, t| f(&join_name("agent", n), t));
        self.mixer.visit_mut(&mut |n, t| f(&join_name("mixer", n), t));
        if let Some(aux) = &mut self.aux_mixer {
            aux.visit_mut(&mut |n, t| f(&join_name("aux_mixer", n), t));
        }
    }
}

/// [`Network`] bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct NetworkVars {
    pub agent: AgentVars,
    pub mixer: MixerVars,
    pub aux_mixer: Option<MixerVars>,
}

impl NetworkVars {
    /// Variables in [`Parameters`] traversal order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.agent.all();
        v.extend(self.mixer.all());
        if let Some(aux) = &self.aux_mixer {
            v.extend(aux.all());
        }
        v
    }

    pub fn mixer_for(&self, head: Head) -> &MixerVars {
        match (head, &self.aux_mixer) {
            (Head::Sparse, Some(aux)) => aux,
            _ => &self.mixer,
        }
    }
}

/// Per-agent utilities for every row `(t·B + b)·N + i` of the first
/// `slots` time slots of a batch, `[slots·B·N × U]` per evaluated head.
#[derive(Clone, Copy, Debug)]
pub struct Unrolled {
    pub q_dense: Option<Var>,
    pub q_sparse: Option<Var>,
}

impl Unrolled {
    pub fn head(&self, head: Head) -> Option<Var> {
        match head {
            Head::Dense => self.q_dense,
            Head::Sparse => self.q_sparse,
        }
    }
}

/// Runs the agent network over a batch, starting from zero hidden states.
/// Attention is evaluated for all slots at once; only the GRU is sequential.
pub fn unroll(tape: &mut Tape, agent: &AgentVars, batch: &EpisodeBatch, slots: usize, heads: Heads) -> Result<Unrolled> {
    let EpisodeDims { n_agents: n, n_entities: m, entity_dim: d, .. } = batch.dims;
    let rows_per_slot = batch.batch * n;
    let rows = slots * rows_per_slot;
    let obs = Tensor::new(Shape::matrix(rows * m, d), batch.obs[..rows * m * d].to_vec())?;
    let obs = tape.constant(obs);
    let enc = agent.encode(tape, obs, &batch.keep[..rows * m], rows, m, heads)?;

    let hidden = tape.shape(agent.gru.u_r).dims()[0];
    let mut h = tape.constant(Tensor::zeros(Shape::matrix(rows_per_slot, hidden)));
    let mut hs = Vec::with_capacity(slots);
    for t in 0..slots {
        let x = tape.slice_rows(enc.pooled_x, t * rows_per_slot, rows_per_slot)?;
        h = gru_step(tape, &agent.gru, x, h)?;
        hs.push(h);
    }
    let h_all = tape.concat_rows(&hs)?;
    let mut out = Unrolled { q_dense: None, q_sparse: None };
    if let Some(y) = enc.pooled_dense {
        out.q_dense = Some(agent.q_values(tape, y, h_all)?);
    }
    if let Some(y) = enc.pooled_sparse {
        out.q_sparse = Some(agent.q_values(tape, y, h_all)?);
    }
    Ok(out)
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    /// TD loss of the acting head.
    pub td: f64,
    /// TD loss of the auxiliary sparse head (0 when there is none).
    pub aux: f64,
    /// `td + λ·aux`.
    pub total: f64,
}

/// Loss nodes on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub td: Var,
    pub aux: Option<Var>,
    pub total: Var,
}

/// Outcome of one gradient step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub losses: Losses,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub synced: bool,
}

/// Online and target networks plus optimizer state.
#[derive(Clone, Debug)]
pub struct Learner {
    config: TrainConfig,
    pub online: Network,
    pub target: Network,
    optimizer: Optimizer,
    train_steps: u64,
    last_sync_episode: u64,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(config: TrainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let online = Network::init(rng, &config);
        Ok(Self::from_network(config, online))
    }

    /// Starts from given online parameters; the target is a copy.
    pub fn from_network(config: TrainConfig, online: Network) -> Self {
        let mut shapes = Vec::new();
        online.visit(&mut |_, t| shapes.push(t.shape()));
        let optimizer = Optimizer::new(config.optimizer, config.lr, config.rms_smoothing, &shapes);
        Learner { target: online.clone(), online, optimizer, config, train_steps: 0, last_sync_episode: 0 }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn last_sync_episode(&self) -> u64 {
        self.last_sync_episode
    }

    /// Heads that take part in training under the configured ablation.
    fn loss_heads(&self) -> (Head, Option<Head>) {
        match self.config.ablation {
            Ablation::S2rl => (Head::Dense, Some(Head::Sparse)),
            Ablation::DenseOnly => (Head::Dense, None),
            Ablation::SparseOnly => (Head::Sparse, None),
        }
    }

    /// `r + γ·(1 − terminal)·mix(max_u' q̄(next, u'))` per transition `t·B + b`,
    /// using the target networks. Padded transitions get 0.
    pub fn td_targets(&self, batch: &EpisodeBatch, head: Head) -> Result<Vec<f64>> {
        let heads = match head {
            Head::Dense => Heads::DenseOnly,
            Head::Sparse => Heads::SparseOnly,
        };
        let mut tape = Tape::new();
        let agent = self.target.agent.bind(&mut tape, false);
        let slots = batch.max_len + 1;
        let q = unroll(&mut tape, &agent, batch, slots, heads)?;
        let q = tape.value(q.head(head).expect("head evaluated")).clone();
        self.targets_from_q(batch, &q, head)
    }

    fn targets_from_q(&self, batch: &EpisodeBatch, q: &Tensor, head: Head) -> Result<Vec<f64>> {
        let EpisodeDims { n_agents: n, n_actions: u, state_dim: s, .. } = batch.dims;
        let (b, t_len) = (batch.batch, batch.max_len);
        let transitions = t_len * b;
        let mut best = vec![0.0; transitions * n];
        for (k, slot) in best.iter_mut().enumerate() {
            let row = b * n + k; // same agent, next time slot
            let qs = q.row(row);
            let avail = &batch.avail[row * u..(row + 1) * u];
            *slot = qs
                .iter()
                .zip(avail)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if !slot.is_finite() {
                *slot = 0.0;
            }
        }
        let mut tape = Tape::new();
        let mixer = self.target.mixer_for(head).bind(&mut tape, false);
        let utilities = tape.constant(Tensor::matrix(transitions, n, best));
        let next_states = batch.states[b * s..(t_len + 1) * b * s].to_vec();
        let states = tape.constant(Tensor::matrix(transitions, s, next_states));
        let mixed = mixer.mix(&mut tape, utilities, states)?;
        let mixed = tape.value(mixed).data();
        let gamma = self.config.gamma;
        Ok((0..transitions)
            .map(|k| {
                if batch.filled[k] == 0.0 {
                    0.0
                } else {
                    batch.rewards[k] + gamma * (1.0 - batch.terminal[k]) * mixed[k]
                }
            })
            .collect())
    }

    /// Builds the losses of `batch` on `tape` against precomputed targets.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        batch: &EpisodeBatch,
        targets: (&[f64], Option<&[f64]>),
    ) -> Result<LossVars> {
        let filled = batch.filled_count();
        if filled == 0 {
            return Err(Error::EmptyBatch);
        }
        let (primary, aux) = self.loss_heads();
        let q = unroll(tape, &vars.agent, batch, batch.max_len, self.config.ablation.heads())?;
        let td = self.head_loss(tape, vars, batch, q, primary, targets.0, filled)?;
        let (aux_var, total) = match (aux, targets.1) {
            (Some(head), Some(aux_targets)) => {
                let a = self.head_loss(tape, vars, batch, q, head, aux_targets, filled)?;
                let weighted = tape.scale(a, self.config.effective_lambda())?;
                (Some(a), tape.add(td, weighted)?)
            }
            _ => (None, td),
        };
        Ok(LossVars { td, aux: aux_var, total })
    }

    #[allow(clippy::too_many_arguments)]
    fn head_loss(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        batch: &EpisodeBatch,
        q: Unrolled,
        head: Head,
        targets: &[f64],
        filled: usize,
    ) -> Result<Var> {
        let (b, n, s) = (batch.batch, batch.dims.n_agents, batch.dims.state_dim);
        let transitions = batch.max_len * b;
        let q = q.head(head).ok_or(Error::InvalidConfig("head not evaluated".into()))?;
        let chosen = tape.gather_cols(q, &batch.actions)?;
        let chosen = tape.reshape(chosen, Shape::matrix(transitions, n))?;
        let states = tape.constant(Tensor::matrix(transitions, s, batch.states[..transitions * s].to_vec()));
        let q_tot = vars.mixer_for(head).mix(tape, chosen, states)?;
        let y = tape.constant(Tensor::vector(targets.to_vec()));
        let mask = tape.constant(Tensor::vector(batch.filled.clone()));
        let diff = tape.sub(q_tot, y)?;
        let sq = tape.square(diff)?;
        let masked = tape.mul(sq, mask)?;
        let total = tape.sum(masked)?;
        tape.scale(total, 1.0 / filled as f64)
    }

    /// Target values for the primary and (if any) auxiliary head, sharing
    /// one unroll of the target agent network.
    pub fn all_targets(&self, batch: &EpisodeBatch) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let (primary, aux) = self.loss_heads();
        let mut tape = Tape::new();
        let agent = self.target.agent.bind(&mut tape, false);
        let q = unroll(&mut tape, &agent, batch, batch.max_len + 1, self.config.ablation.heads())?;
        let q_primary = tape.value(q.head(primary).expect("primary head evaluated")).clone();
        let q_aux = aux.map(|h| tape.value(q.head(h).expect("aux head evaluated")).clone());
        drop(tape);
        let y = self.targets_from_q(batch, &q_primary, primary)?;
        let y_aux = match (aux, q_aux) {
            (Some(h), Some(q)) => Some(self.targets_from_q(batch, &q, h)?),
            _ => None,
        };
        Ok((y, y_aux))
    }

    /// Loss values at the current online parameters.
    pub fn compute_losses(&self, batch: &EpisodeBatch) -> Result<Losses> {
        let (y, y_aux) = self.all_targets(batch)?;
        let mut tape = Tape::new();
        let vars = self.online.bind(&mut tape, false);
        let l = self.loss_graph(&mut tape, &vars, batch, (&y, y_aux.as_deref()))?;
        Ok(read_losses(&tape, &l))
    }

    /// One optimizer step on `batch`; syncs the targets once `episode` is
    /// at least `target_update_interval` past the previous sync.
    pub fn train_step(&mut self, batch: &EpisodeBatch, episode: u64) -> Result<TrainStats> {
        let (y, y_aux) = self.all_targets(batch)?;
        let mut tape = Tape::new();
        let vars = self.online.bind(&mut tape, true);
        let l = self.loss_graph(&mut tape, &vars, batch, (&y, y_aux.as_deref()))?;
        let losses = read_losses(&tape, &l);
        let shapes: Vec<Shape> = vars.all().iter().map(|&v| tape.shape(v)).collect();
        let all = vars.all();
        let mut grads = tape.backward(l.total)?;
        let mut grads: Vec<Tensor> =
            all.iter().zip(shapes).map(|(&v, s)| grads.take(v).unwrap_or_else(|| Tensor::zeros(s))).collect();
        let grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        self.optimizer.step_params(&mut self.online, &grads)?;
        self.train_steps += 1;
        let synced = self.maybe_sync(episode);
        Ok(TrainStats { losses, grad_norm, synced })
    }

    /// Copies online parameters into the targets if a sync is due.
    pub fn maybe_sync(&mut self, episode: u64) -> bool {
        if episode.saturating_sub(self.last_sync_episode) >= self.config.target_update_interval {
            self.sync_targets();
            self.last_sync_episode = episode;
            true
        } else {
            false
        }
    }

    pub fn sync_targets(&mut self) {
        self.target = self.online.clone();
    }
}

fn read_losses(tape: &Tape, l: &LossVars) -> Losses {
    Losses {
        td: tape.value(l.td).item(),
        aux: l.aux.map_or(0.0, |a| tape.value(a).item()),
        total: tape.value(l.total).item(),
    }
}
