//! Episode collection, replay, TD losses for both heads and the training loop.
//!
//! The loss on a sampled batch is
//!
//! ```text
//! L_td    = mean over filled steps of (y_dense  − Q_tot(dense  utilities))²
//! L_aux   = mean over filled steps of (y_sparse − Q_tot(sparse utilities))²
//! L_total = L_td + λ·L_aux
//! ```
//!
//! with `y = r + γ·(1 − terminal)·Q̄_tot(s′, per-agent argmax over available
//! actions)` computed by target copies of the agent network and mixer. Only
//! the dense head acts; the sparse head shapes the shared attention
//! parameters through its loss.

mod buffer;
mod config;
mod learner;
mod run;

pub use buffer::{Episode, EpisodeBatch, EpisodeDims, ReplayBuffer};
pub use config::{Ablation, AuxMixer, Head, TrainConfig};
pub use learner::{unroll, Learner, LossVars, Losses, Network, NetworkVars, TrainStats, Unrolled};
pub use run::{
    collect_episode, episode_dims, evaluate, evaluate_random, snapshot, stream_rng, streams, train, Actor,
    ActorOutput, EvalStats, MetricsRow, RunOutcome, Snapshot,
};
