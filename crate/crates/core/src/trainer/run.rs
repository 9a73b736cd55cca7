use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::buffer::{Episode, EpisodeDims, ReplayBuffer};
use super::config::{Head, TrainConfig};
use super::learner::{Learner, Network};
use crate::agent::{epsilon_at, greedy_action, select_action, AgentParams, AgentVars, Heads};
use crate::env::{EnvConfig, FocusFire};
use crate::error::Result;
use crate::numerics::{Shape, Tape, Tensor};

/// Decentralised execution: every agent runs the shared network on its own
/// observation and hidden state. Parameters are bound once and the tape is
/// rewound after each step.
#[derive(Debug)]
pub struct Actor {
    tape: Tape,
    vars: AgentVars,
    base: usize,
    hidden: Tensor,
    n_agents: usize,
    heads: Heads,
    acting: Head,
}

/// Output of one [`Actor::forward`] call for all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorOutput {
    /// Acting-head utilities, `[N × U]` row-major.
    pub q: Vec<f64>,
    /// `[N × M × M]` per evaluated head.
    pub dense_weights: Option<Vec<f64>>,
    pub sparse_weights: Option<Vec<f64>>,
}

impl Actor {
    pub fn new(params: &AgentParams, n_agents: usize, heads: Heads, acting: Head) -> Self {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let base = tape.len();
        let hidden = Tensor::zeros(Shape::matrix(n_agents, params.dims().hidden_dim));
        Actor { tape, vars, base, hidden, n_agents, heads, acting }
    }

    /// Zeroes the hidden states at the start of an episode.
    pub fn reset(&mut self) {
        self.hidden.data_mut().iter_mut().for_each(|h| *h = 0.0);
    }

    pub fn forward(&mut self, obs: &[f64], keep: &[bool]) -> Result<ActorOutput> {
        let n = self.n_agents;
        let m = keep.len() / n;
        let tape = &mut self.tape;
        tape.truncate(self.base);
        let o = tape.constant(Tensor::new(Shape::matrix(n * m, obs.len() / (n * m)), obs.to_vec())?);
        let h = tape.constant(self.hidden.clone());
        let out = self.vars.step(tape, o, keep, n, m, h, self.heads)?;
        self.hidden = tape.value(out.h_next).clone();
        let q = match self.acting {
            Head::Dense => out.q_dense,
            Head::Sparse => out.q_sparse,
        }
        .expect("acting head evaluated");
        let read = |v: Option<crate::numerics::Var>| v.map(|v| tape.value(v).data().to_vec());
        Ok(ActorOutput {
            q: tape.value(q).data().to_vec(),
            dense_weights: read(out.dense_weights),
            sparse_weights: read(out.sparse_weights),
        })
    }
}

/// Everything the agents and the mixer see at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub obs: Vec<f64>,
    pub keep: Vec<bool>,
    pub avail: Vec<bool>,
    pub state: Vec<f64>,
}

pub fn snapshot(env: &FocusFire) -> Snapshot {
    let n = env.config().n_allies;
    let mut s = Snapshot { obs: Vec::new(), keep: Vec::new(), avail: Vec::new(), state: env.global_state() };
    for i in 0..n {
        let o = env.observe(i);
        s.obs.extend_from_slice(o.entities().data());
        s.keep.extend(o.key_mask());
        s.avail.extend(env.avail_actions(i));
    }
    s
}

pub fn episode_dims(config: &EnvConfig) -> EpisodeDims {
    EpisodeDims {
        n_agents: config.n_allies,
        n_entities: config.n_units(),
        entity_dim: config.entity_dim(),
        n_actions: config.n_actions(),
        state_dim: config.state_dim(),
    }
}

/// Plays one ε-greedy episode. `env_rng` drives the reset, `act_rng` the
/// exploration.
pub fn collect_episode<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    env: &mut FocusFire,
    actor: &mut Actor,
    epsilon: f64,
    env_rng: &mut R1,
    act_rng: &mut R2,
) -> Result<Episode> {
    env.reset(env_rng);
    actor.reset();
    let dims = episode_dims(env.config());
    let (n, u) = (dims.n_agents, dims.n_actions);
    let mut ep = Episode::new(dims);
    let mut snap = snapshot(env);
    let mut actions = alloc::vec![0; n];
    loop {
        ep.push_observation(&snap.obs, &snap.keep, &snap.avail, &snap.state);
        let out = actor.forward(&snap.obs, &snap.keep)?;
        for (i, a) in actions.iter_mut().enumerate() {
            *a = select_action(&out.q[i * u..(i + 1) * u], &snap.avail[i * u..(i + 1) * u], epsilon, act_rng)?;
        }
        let step = env.step(&actions)?;
        ep.push_transition(&actions, step.reward);
        snap = snapshot(env);
        if step.terminal {
            ep.push_observation(&snap.obs, &snap.keep, &snap.avail, &snap.state);
            ep.terminated = !step.info.truncated;
            ep.won = step.info.won;
            return Ok(ep);
        }
    }
}

/// Aggregate results of evaluation episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub episodes: usize,
    pub win_rate: f64,
    pub return_mean: f64,
    /// Mean number of nonzero sparse weights per visible query row of an
    /// alive agent (NaN when the sparse head is not evaluated).
    pub mean_sparse_support: f64,
    /// Same count for the dense head; equals the number of visible entities.
    pub mean_dense_support: f64,
}

#[derive(Default)]
struct SupportTally {
    rows: usize,
    dense: usize,
    sparse: usize,
}

impl SupportTally {
    fn add(&mut self, keep: &[bool], avail: &[bool], n: usize, out: &ActorOutput) {
        let m = keep.len() / n;
        let u = avail.len() / n;
        for i in 0..n {
            // Dead agents have only the no-op available and see nothing.
            if avail[i * u + crate::env::NOOP] {
                continue;
            }
            for r in 0..m {
                if !keep[i * m + r] {
                    continue;
                }
                self.rows += 1;
                let at = (i * m + r) * m;
                let count = |w: &Option<Vec<f64>>| w.as_ref().map_or(0, |w| w[at..at + m].iter().filter(|&&x| x > 0.0).count());
                self.dense += count(&out.dense_weights);
                self.sparse += count(&out.sparse_weights);
            }
        }
    }

    fn mean(&self, total: usize, present: bool) -> f64 {
        if present && self.rows > 0 {
            total as f64 / self.rows as f64
        } else {
            f64::NAN
        }
    }
}

/// Greedy evaluation with the acting head; `rng` drives env resets only.
pub fn evaluate<R: Rng + ?Sized>(env: &mut FocusFire, actor: &mut Actor, episodes: usize, rng: &mut R) -> Result<EvalStats> {
    let n = env.config().n_allies;
    let u = env.config().n_actions();
    let (mut wins, mut returns) = (0usize, 0.0);
    let mut tally = SupportTally::default();
    let mut actions = alloc::vec![0; n];
    for _ in 0..episodes {
        env.reset(rng);
        actor.reset();
        loop {
            let snap = snapshot(env);
            let out = actor.forward(&snap.obs, &snap.keep)?;
            tally.add(&snap.keep, &snap.avail, n, &out);
            for (i, a) in actions.iter_mut().enumerate() {
                *a = greedy_action(&out.q[i * u..(i + 1) * u], &snap.avail[i * u..(i + 1) * u])?;
            }
            let step = env.step(&actions)?;
            returns += step.reward;
            if step.terminal {
                wins += usize::from(step.info.won);
                break;
            }
        }
    }
    Ok(EvalStats {
        episodes,
        win_rate: wins as f64 / episodes.max(1) as f64,
        return_mean: returns / episodes.max(1) as f64,
        mean_sparse_support: tally.mean(tally.sparse, actor.heads.sparse()),
        mean_dense_support: tally.mean(tally.dense, actor.heads.dense()),
    })
}

/// Win rate and return of a policy that picks uniformly among available actions.
pub fn evaluate_random<R: Rng + ?Sized>(config: &EnvConfig, episodes: usize, rng: &mut R) -> Result<EvalStats> {
    let mut env = FocusFire::new(config.clone())?;
    let n = config.n_allies;
    let (mut wins, mut returns) = (0usize, 0.0);
    let zeros = alloc::vec![0.0; config.n_actions()];
    let mut actions = alloc::vec![0; n];
    for _ in 0..episodes {
        env.reset(rng);
        loop {
            for (i, a) in actions.iter_mut().enumerate() {
                *a = select_action(&zeros, &env.avail_actions(i), 1.0, rng)?;
            }
            let step = env.step(&actions)?;
            returns += step.reward;
            if step.terminal {
                wins += usize::from(step.info.won);
                break;
            }
        }
    }
    Ok(EvalStats {
        episodes,
        win_rate: wins as f64 / episodes.max(1) as f64,
        return_mean: returns / episodes.max(1) as f64,
        mean_sparse_support: f64::NAN,
        mean_dense_support: f64::NAN,
    })
}

/// One learning-curve point, written at every evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: u64,
    pub env_steps: u64,
    pub epsilon: f64,
    /// Mean training losses since the previous row (NaN if no update happened).
    pub loss_td: f64,
    pub loss_aux: f64,
    pub loss_total: f64,
    /// Mean return of training episodes since the previous row.
    pub train_return_mean: f64,
    pub test_win_rate: f64,
    pub test_return_mean: f64,
    pub mean_sparse_support: f64,
    pub mean_dense_support: f64,
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub network: Network,
    pub episodes: u64,
    pub env_steps: u64,
    pub train_steps: u64,
}

/// Independent random streams derived from one seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const ENV: u64 = 1;
    pub const ACT: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const EVAL: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Default)]
struct Window {
    td: f64,
    aux: f64,
    total: f64,
    updates: usize,
    returns: f64,
    episodes: usize,
}

impl Window {
    fn mean(sum: f64, n: usize) -> f64 {
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }
}

/// Collects episodes and learns until `t_max` environment steps have been
/// taken, evaluating greedily at the start, every `eval_interval` episodes
/// and at the end. `observer` sees each metrics row as it is produced.
pub fn train(config: &TrainConfig, seed: u64, observer: &mut dyn FnMut(&MetricsRow)) -> Result<RunOutcome> {
    config.validate()?;
    let mut learner = Learner::new(config.clone(), &mut stream_rng(seed, streams::INIT))?;
    let (mut env_rng, mut act_rng) = (stream_rng(seed, streams::ENV), stream_rng(seed, streams::ACT));
    let (mut sample_rng, mut eval_rng) = (stream_rng(seed, streams::SAMPLE), stream_rng(seed, streams::EVAL));
    let mut env = FocusFire::new(config.env.clone())?;
    let mut eval_env = FocusFire::new(config.env.clone())?;
    let mut buffer = ReplayBuffer::new(config.buffer_size);
    let heads = config.ablation.heads();
    let acting = config.ablation.acting_head();
    let n = config.env.n_allies;

    let mut rows = Vec::new();
    let (mut episode, mut env_steps) = (0u64, 0u64);
    let mut window = Window::default();
    let mut emit = |learner: &Learner, episode: u64, env_steps: u64, window: &mut Window, rows: &mut Vec<MetricsRow>| {
        let mut actor = Actor::new(&learner.online.agent, n, heads, acting);
        let stats = evaluate(&mut eval_env, &mut actor, config.eval_episodes, &mut eval_rng)?;
        let row = MetricsRow {
            episode,
            env_steps,
            epsilon: epsilon_at(env_steps, &config.epsilon),
            loss_td: Window::mean(window.td, window.updates),
            loss_aux: Window::mean(window.aux, window.updates),
            loss_total: Window::mean(window.total, window.updates),
            train_return_mean: Window::mean(window.returns, window.episodes),
            test_win_rate: stats.win_rate,
            test_return_mean: stats.return_mean,
            mean_sparse_support: stats.mean_sparse_support,
            mean_dense_support: stats.mean_dense_support,
        };
        observer(&row);
        rows.push(row);
        *window = Window::default();
        Ok::<(), crate::Error>(())
    };

    emit(&learner, episode, env_steps, &mut window, &mut rows)?;
    let mut last_eval = 0u64;
    while env_steps < config.t_max {
        let epsilon = epsilon_at(env_steps, &config.epsilon);
        let mut actor = Actor::new(&learner.online.agent, n, heads, acting);
        let ep = collect_episode(&mut env, &mut actor, epsilon, &mut env_rng, &mut act_rng)?;
        env_steps += ep.len as u64;
        episode += 1;
        window.returns += ep.total_return();
        window.episodes += 1;
        buffer.push(ep);

        if buffer.len() >= config.batch_size {
            let batch = buffer.sample(config.batch_size, &mut sample_rng)?;
            let stats = learner.train_step(&batch, episode)?;
            window.td += stats.losses.td;
            window.aux += stats.losses.aux;
            window.total += stats.losses.total;
            window.updates += 1;
        }
        if episode - last_eval >= config.eval_interval {
            emit(&learner, episode, env_steps, &mut window, &mut rows)?;
            last_eval = episode;
        }
    }
    if last_eval != episode {
        emit(&learner, episode, env_steps, &mut window, &mut rows)?;
    }
    Ok(RunOutcome { rows, train_steps: learner.train_steps(), network: learner.online, episodes: episode, env_steps })
}
