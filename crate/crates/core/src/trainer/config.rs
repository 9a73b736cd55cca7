use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::agent::{EpsilonSchedule, Heads};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::mixer::MixerKind;
use crate::numerics::OptimizerKind;

/// Which heads are trained and which one acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Dense head acts and carries the TD loss; the sparse head adds a
    /// λ-weighted auxiliary TD loss.
    S2rl,
    /// Dense head only; λ is forced to 0 and the sparse head is never evaluated.
    DenseOnly,
    /// Sparse head acts and is the only head trained.
    SparseOnly,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::S2rl => "s2rl",
            Ablation::DenseOnly => "dense_only",
            Ablation::SparseOnly => "sparse_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "s2rl" => Some(Ablation::S2rl),
            "dense_only" => Some(Ablation::DenseOnly),
            "sparse_only" => Some(Ablation::SparseOnly),
            _ => None,
        }
    }

    /// Heads evaluated during training and target computation.
    pub fn heads(self) -> Heads {
        match self {
            Ablation::S2rl => Heads::Both,
            Ablation::DenseOnly => Heads::DenseOnly,
            Ablation::SparseOnly => Heads::SparseOnly,
        }
    }

    /// The head whose greedy action is executed.
    pub fn acting_head(self) -> Head {
        match self {
            Ablation::SparseOnly => Head::Sparse,
            _ => Head::Dense,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Dense,
    Sparse,
}

/// Whether the auxiliary sparse loss is mixed by the main mixer or by its own copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxMixer {
    Shared,
    Separate,
}

impl AuxMixer {
    pub fn name(self) -> &'static str {
        match self {
            AuxMixer::Shared => "shared",
            AuxMixer::Separate => "separate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shared" => Some(AuxMixer::Shared),
            "separate" => Some(AuxMixer::Separate),
            _ => None,
        }
    }
}

/// Everything a single training run needs apart from the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub mixer: MixerKind,
    pub mixing_embed_dim: usize,
    pub aux_mixer: AuxMixer,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub rms_smoothing: f64,
    pub grad_clip: f64,
    pub epsilon: EpsilonSchedule,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub target_update_interval: u64,
    pub t_max: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvConfig::default(),
            mixer: MixerKind::Monotonic,
            mixing_embed_dim: 32,
            aux_mixer: AuxMixer::Shared,
            embed_dim: 32,
            hidden_dim: 64,
            lambda: 1.0,
            gamma: 0.99,
            lr: 5e-4,
            optimizer: OptimizerKind::RmsProp,
            rms_smoothing: 0.99,
            grad_clip: 10.0,
            epsilon: EpsilonSchedule::default(),
            batch_size: 32,
            buffer_size: 5000,
            target_update_interval: 200,
            t_max: 200_000,
            eval_interval: 100,
            eval_episodes: 32,
            ablation: Ablation::S2rl,
        }
    }
}

impl TrainConfig {
    /// λ actually applied: zero unless the sparse head is auxiliary.
    pub fn effective_lambda(&self) -> f64 {
        match self.ablation {
            Ablation::S2rl => self.lambda,
            _ => 0.0,
        }
    }

    /// Whether a second mixer (and its target) exists for the auxiliary loss.
    pub fn has_aux_mixer(&self) -> bool {
        self.ablation == Ablation::S2rl && self.aux_mixer == AuxMixer::Separate
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if let Err(Error::InvalidConfig(msg)) = self.env.validate() {
            problems.push(msg);
        }
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                problems.push(String::from(msg));
            }
        };
        need(self.mixing_embed_dim >= 1, "mixing_embed_dim must be at least 1");
        need(self.embed_dim >= 1, "embed_dim must be at least 1");
        need(self.hidden_dim >= 1, "hidden_dim must be at least 1");
        need(self.lambda.is_finite() && self.lambda >= 0.0, "lambda must be non-negative");
        need((0.0..1.0).contains(&self.gamma), "gamma must lie in [0, 1)");
        need(self.lr.is_finite() && self.lr > 0.0, "lr must be positive");
        need((0.0..1.0).contains(&self.rms_smoothing), "rms_smoothing must lie in [0, 1)");
        need(self.grad_clip.is_finite() && self.grad_clip > 0.0, "grad_clip must be positive");
        let eps = &self.epsilon;
        need((0.0..=1.0).contains(&eps.start), "epsilon_start must lie in [0, 1]");
        need((0.0..=1.0).contains(&eps.finish), "epsilon_finish must lie in [0, 1]");
        need(self.batch_size >= 1, "batch_size must be at least 1");
        need(self.buffer_size >= self.batch_size, "buffer_size must be at least batch_size");
        need(self.target_update_interval >= 1, "target_update_interval must be at least 1");
        need(self.eval_interval >= 1, "eval_interval must be at least 1");
        need(self.eval_episodes >= 1, "eval_episodes must be at least 1");
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{} / {} mixer, λ={}, {} env steps",
            self.ablation.name(),
            match self.mixer {
                MixerKind::Additive => "additive",
                MixerKind::Monotonic => "monotonic",
            },
            self.effective_lambda(),
            self.t_max
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn dense_only_forces_lambda() {
        let c = TrainConfig { ablation: Ablation::DenseOnly, lambda: 3.0, ..TrainConfig::default() };
        assert_eq!(c.effective_lambda(), 0.0);
        assert_eq!(c.ablation.heads(), Heads::DenseOnly);
    }

    #[test]
    fn all_problems_listed() {
        let c = TrainConfig { lambda: -1.0, gamma: 1.0, batch_size: 0, ..TrainConfig::default() };
        let Err(Error::InvalidConfig(msg)) = c.validate() else { panic!("expected error") };
        for key in ["lambda", "gamma", "batch_size"] {
            assert!(msg.contains(key), "{msg}");
        }
    }
}
