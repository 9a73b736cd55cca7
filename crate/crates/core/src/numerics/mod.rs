//! Dense tensors, reverse-mode differentiation, probability maps over rows
//! (softmax and sparsemax), a GRU cell and the optimizers.

mod gru;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gru::{gru_cell, gru_step, GruParams, GruVars};
pub use optim::{
    adam_step, clip_grad_norm, global_norm, rmsprop_step, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2,
    ADAM_EPS, RMSPROP_EPS,
};
pub use params::{bind_all, copy_params, join_name, uniform_init, Parameters};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, softmax_rows, sparsemax_backward, sparsemax_rows, Shape, Tensor};
