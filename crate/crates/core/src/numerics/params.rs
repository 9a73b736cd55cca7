use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{Shape, Tape, Tensor, Var};

/// A named collection of trainable tensors with a fixed traversal order.
///
/// The order of `visit` and `visit_mut` must agree; optimizers, gradient
/// collection and checkpoints all index parameters by that order.
pub trait Parameters {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((String::from(name), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

/// Puts every parameter of `params` on `tape`, in traversal order.
pub fn bind_all<P: Parameters + ?Sized>(params: &P, tape: &mut Tape, trainable: bool) -> Vec<Var> {
    let mut vars = Vec::new();
    params.visit(&mut |_, t| {
        let v = if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        vars.push(v);
    });
    vars
}

/// Copies values from `src` into `dst` position by position.
pub fn copy_params<P: Parameters + ?Sized>(dst: &mut P, src: &P) {
    let mut values = Vec::new();
    src.visit(&mut |_, t| values.push(t.clone()));
    let mut it = values.into_iter();
    dst.visit_mut(&mut |_, t| *t = it.next().expect("same parameter layout"));
}

/// Uniform initialisation in `±1/√fan_in`.
pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: Shape, fan_in: usize) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let data = (0..shape.numel()).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// `prefix.name`, for composing nested parameter names.
pub fn join_name(prefix: &str, name: &str) -> String {
    let mut full = String::with_capacity(prefix.len() + name.len() + 1);
    full.push_str(prefix);
    full.push('.');
    full.push_str(name);
    full
}
