//! First-order optimizers and gradient clipping.

use alloc::vec::Vec;

use super::{Parameters, Shape, Tensor};
use crate::error::{Error, Result};

/// Stabiliser added to the RMSprop denominator.
pub const RMSPROP_EPS: f64 = 1e-5;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

fn check(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { op, left: a, right: b })
    }
}

/// One RMSprop update without momentum or weight decay:
/// `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − lr·g / (√s + δ)`.
pub fn rmsprop_step(param: &mut Tensor, grad: &Tensor, state: &mut Tensor, lr: f64, smoothing: f64) -> Result<()> {
    check("rmsprop_step", param.shape(), grad.shape())?;
    check("rmsprop_step", param.shape(), state.shape())?;
    for ((p, g), s) in param.data_mut().iter_mut().zip(grad.data()).zip(state.data_mut()) {
        *s = smoothing * *s + (1.0 - smoothing) * g * g;
        *p -= lr * g / (libm::sqrt(*s) + RMSPROP_EPS);
    }
    Ok(())
}

/// One bias-corrected Adam update at 1-based iteration `step`.
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    first: &mut Tensor,
    second: &mut Tensor,
    lr: f64,
    step: u64,
) -> Result<()> {
    check("adam_step", param.shape(), grad.shape())?;
    check("adam_step", param.shape(), first.shape())?;
    check("adam_step", param.shape(), second.shape())?;
    let c1 = 1.0 - libm::pow(ADAM_BETA1, step as f64);
    let c2 = 1.0 - libm::pow(ADAM_BETA2, step as f64);
    let it = param.data_mut().iter_mut().zip(grad.data()).zip(first.data_mut()).zip(second.data_mut());
    for (((p, g), m), v) in it {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + ADAM_EPS);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
}

/// Optimizer state for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    smoothing: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    /// `shapes` lists the parameters in the order later passed to [`Optimizer::step`].
    pub fn new(kind: OptimizerKind, lr: f64, smoothing: f64, shapes: &[Shape]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|&s| Tensor::zeros(s)).collect();
        let first = if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() };
        Optimizer { kind, lr, smoothing, first, second: zeros, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.second.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                left: Shape::vector(params.len()),
                right: Shape::vector(grads.len()),
            });
        }
        self.steps += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::RmsProp => rmsprop_step(p, g, &mut self.second[i], self.lr, self.smoothing)?,
                OptimizerKind::Adam => {
                    adam_step(p, g, &mut self.first[i], &mut self.second[i], self.lr, self.steps)?
                }
            }
        }
        Ok(())
    }
}

impl Optimizer {
    /// Like [`Optimizer::step`], with parameters taken from a
    /// [`Parameters`] tree in its traversal order.
    pub fn step_params<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[Tensor]) -> Result<()> {
        let mut count = 0;
        params.visit(&mut |_, _| count += 1);
        if count != grads.len() || count != self.second.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                left: Shape::vector(count),
                right: Shape::vector(grads.len()),
            });
        }
        self.steps += 1;
        let (kind, lr, smoothing, steps) = (self.kind, self.lr, self.smoothing, self.steps);
        let (first, second) = (&mut self.first, &mut self.second);
        let mut i = 0;
        let mut outcome = Ok(());
        params.visit_mut(&mut |_, p| {
            if outcome.is_ok() {
                outcome = match kind {
                    OptimizerKind::RmsProp => rmsprop_step(p, &grads[i], &mut second[i], lr, smoothing),
                    OptimizerKind::Adam => adam_step(p, &grads[i], &mut first[i], &mut second[i], lr, steps),
                };
            }
            i += 1;
        });
        outcome
    }
}

/// Euclidean norm over all gradient entries.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    libm::sqrt(grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum())
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.data_mut().iter_mut()).for_each(|v| *v *= c);
    }
    norm
}
