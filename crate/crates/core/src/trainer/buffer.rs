use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// Sizes shared by every episode of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeDims {
    pub n_agents: usize,
    pub n_entities: usize,
    pub entity_dim: usize,
    pub n_actions: usize,
    pub state_dim: usize,
}

/// One recorded episode of `len` transitions.
///
/// Observation-side arrays hold `len + 1` slots: the extra final slot is
/// the observation after the last transition, needed to bootstrap
/// time-limited episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub dims: EpisodeDims,
    pub len: usize,
    /// `[(len+1) · N · M · d_E]`
    pub obs: Vec<f64>,
    /// Attention key masks, `[(len+1) · N · M]`.
    pub keep: Vec<bool>,
    /// `[(len+1) · N · U]`
    pub avail: Vec<bool>,
    /// `[(len+1) · S]`
    pub states: Vec<f64>,
    /// `[len · N]`
    pub actions: Vec<usize>,
    /// `[len]`
    pub rewards: Vec<f64>,
    /// The last transition ended the game (rather than the time limit).
    pub terminated: bool,
    pub won: bool,
}

impl Episode {
    pub fn new(dims: EpisodeDims) -> Self {
        Episode {
            dims,
            len: 0,
            obs: Vec::new(),
            keep: Vec::new(),
            avail: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            won: false,
        }
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Appends the observation slot for the current time step.
    pub fn push_observation(&mut self, obs: &[f64], keep: &[bool], avail: &[bool], state: &[f64]) {
        self.obs.extend_from_slice(obs);
        self.keep.extend_from_slice(keep);
        self.avail.extend_from_slice(avail);
        self.states.extend_from_slice(state);
    }

    pub fn push_transition(&mut self, actions: &[usize], reward: f64) {
        self.actions.extend_from_slice(actions);
        self.rewards.push(reward);
        self.len += 1;
    }

    fn slots(&self) -> usize {
        self.states.len() / self.dims.state_dim.max(1)
    }
}

/// FIFO store of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity: capacity.max(1), episodes: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds an episode, evicting the oldest one when full.
    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Draws `n` distinct episodes uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<EpisodeBatch> {
        if self.episodes.len() < n {
            return Err(Error::InsufficientData { have: self.episodes.len(), need: n });
        }
        let picks = rand::seq::index::sample(rng, self.episodes.len(), n);
        let chosen: Vec<&Episode> = picks.iter().map(|i| &self.episodes[i]).collect();
        EpisodeBatch::from_episodes(&chosen)
    }
}

/// Episodes padded to a common length, laid out time-major.
///
/// With `T` the longest episode and `B` the batch size, per-transition
/// arrays have `T·B` entries indexed `t·B + b`; observation-side arrays
/// have `(T+1)·B` slots. Per-agent rows are `(t·B + b)·N + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub dims: EpisodeDims,
    pub batch: usize,
    pub max_len: usize,
    pub obs: Vec<f64>,
    pub keep: Vec<bool>,
    pub avail: Vec<bool>,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// 1 where `t < len_b`, else 0.
    pub filled: Vec<f64>,
    /// 1 where `t` is the last transition of a game-ending episode.
    pub terminal: Vec<f64>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&Episode]) -> Result<Self> {
        let Some(first) = episodes.first() else { return Err(Error::EmptyBatch) };
        let dims = first.dims;
        if episodes.iter().any(|e| e.dims != dims || e.slots() != e.len + 1) {
            return Err(Error::InvalidConfig("episodes disagree in layout".into()));
        }
        let b = episodes.len();
        let t_max = episodes.iter().map(|e| e.len).max().unwrap_or(0);
        if t_max == 0 {
            return Err(Error::EmptyBatch);
        }
        let EpisodeDims { n_agents: n, n_entities: m, entity_dim: d, n_actions: u, state_dim: s } = dims;
        let slots = (t_max + 1) * b;
        let mut out = EpisodeBatch {
            dims,
            batch: b,
            max_len: t_max,
            obs: vec![0.0; slots * n * m * d],
            keep: vec![false; slots * n * m],
            avail: vec![false; slots * n * u],
            states: vec![0.0; slots * s],
            actions: vec![0; t_max * b * n],
            rewards: vec![0.0; t_max * b],
            filled: vec![0.0; t_max * b],
            terminal: vec![0.0; t_max * b],
        };
        // Padding keeps the self key visible so attention stays well defined.
        for row in 0..slots * n {
            out.keep[row * m] = true;
        }
        for (bi, ep) in episodes.iter().enumerate() {
            for t in 0..=ep.len {
                let slot = t * b + bi;
                copy(&mut out.obs, &ep.obs, slot, t, n * m * d);
                copy(&mut out.keep, &ep.keep, slot, t, n * m);
                copy(&mut out.avail, &ep.avail, slot, t, n * u);
                copy(&mut out.states, &ep.states, slot, t, s);
            }
            for t in 0..ep.len {
                let slot = t * b + bi;
                copy(&mut out.actions, &ep.actions, slot, t, n);
                out.rewards[slot] = ep.rewards[t];
                out.filled[slot] = 1.0;
            }
            if ep.terminated {
                out.terminal[(ep.len - 1) * b + bi] = 1.0;
            }
        }
        Ok(out)
    }

    /// Number of filled transitions.
    pub fn filled_count(&self) -> usize {
        self.filled.iter().filter(|&&f| f > 0.0).count()
    }
}

fn copy<T: Copy>(dst: &mut [T], src: &[T], dst_slot: usize, src_slot: usize, width: usize) {
    dst[dst_slot * width..(dst_slot + 1) * width].copy_from_slice(&src[src_slot * width..(src_slot + 1) * width]);
}
