use alloc::string::String;
use core::fmt;

use crate::numerics::Shape;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand extents do not line up for `op`.
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    /// A NaN or infinity was fed to, or produced by, `op`.
    NonFinite { op: &'static str },
    /// Sparsemax backward called on an all-zero row.
    EmptySupport,
    /// `backward` needs a single-element root.
    NotScalar(Shape),
    /// The backward root has no trainable ancestor.
    DetachedRoot,
    NoAvailableAction,
    InvalidConfig(String),
    UnavailableAction { agent: usize, action: usize },
    /// `step` was called after the episode terminated.
    EpisodeOver,
    EmptyBatch,
    InsufficientData { have: usize, need: usize },
    CheckpointMismatch(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left} and {right}")
            }
            Error::NonFinite { op } => write!(f, "{op}: non-finite value"),
            Error::EmptySupport => f.write_str("sparsemax backward on a row with empty support"),
            Error::NotScalar(shape) => write!(f, "backward root must be scalar, got {shape}"),
            Error::DetachedRoot => f.write_str("backward root does not depend on any trainable tensor"),
            Error::NoAvailableAction => f.write_str("no action is available"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::UnavailableAction { agent, action } => {
                write!(f, "agent {agent} chose unavailable action {action}")
            }
            Error::EpisodeOver => f.write_str("episode already terminated"),
            Error::EmptyBatch => f.write_str("empty batch"),
            Error::InsufficientData { have, need } => {
                write!(f, "replay buffer holds {have} episodes, {need} needed")
            }
            Error::CheckpointMismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
