//! Cooperative multi-agent Q-learning with entity self-attention.
//!
//! Each agent embeds its observed entities, runs one self-attention layer
//! through two heads that share the query/key/value projections (a dense
//! softmax head that drives behaviour and a sparsemax head trained as an
//! auxiliary objective), encodes its history with a GRU, and produces one
//! action-value vector per head. Per-agent values are combined by an
//! additive or a monotonic state-conditioned mixer and trained end to end
//! with TD losses on replayed episodes.
//!
//! The crate is `no_std` + `alloc`; enabling the `std` feature only turns on
//! runtime CPU detection in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod attention;
pub mod env;
pub mod error;
pub mod mixer;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
