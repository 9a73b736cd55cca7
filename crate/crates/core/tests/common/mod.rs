//! Helpers shared by the integration tests.
#![allow(dead_code)]

use attnmix_core::numerics::{bind_all, Parameters, Tape, Tensor, Var};
use attnmix_core::Result;
use attnmix_testkit::{max_relative_error, numeric_gradient, SplitMix};

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-3;

/// Loose tensors treated as one parameter collection.
#[derive(Clone, Debug)]
pub struct Leaves(pub Vec<Tensor>);

impl Parameters for Leaves {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.0.iter().for_each(|t| f("leaf", t));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.0.iter_mut().for_each(|t| f("leaf", t));
    }
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit(&mut |_, t| out.extend_from_slice(t.data()));
    out
}

pub fn assign<P: Parameters + ?Sized>(p: &mut P, x: &[f64]) {
    let mut at = 0;
    p.visit_mut(&mut |_, t| {
        let n = t.len();
        t.data_mut().copy_from_slice(&x[at..at + n]);
        at += n;
    });
}

/// Gradient of `root` with respect to `vars`, flattened; missing entries are 0.
pub fn collect_grads(tape: &mut Tape, root: Var, vars: &[Var]) -> Vec<f64> {
    let sizes: Vec<usize> = vars.iter().map(|&v| tape.shape(v).numel()).collect();
    let grads = tape.backward(root).unwrap();
    let mut out = Vec::new();
    for (v, n) in vars.iter().zip(sizes) {
        match grads.get(*v) {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(0.0, n)),
        }
    }
    out
}

/// Max relative error between the tape gradient of `Σ w∘build(inputs)` and
/// central differences of the same scalar, for a random projection `w`.
pub fn tape_gradient_error(
    rng: &mut SplitMix,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let w = {
        let mut tape = Tape::new();
        let vars = bind_all(&Leaves(inputs.clone()), &mut tape, false);
        let out = build(&mut tape, &vars).unwrap();
        Tensor::new(tape.shape(out), rng.vec(tape.shape(out).numel(), -1.0, 1.0)).unwrap()
    };
    let scalar = |p: &Leaves, trainable: bool| -> (Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars = bind_all(p, &mut tape, trainable);
        let out = build(&mut tape, &vars).unwrap();
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        let root = tape.sum(prod).unwrap();
        (tape, root, vars)
    };
    let p = Leaves(inputs);
    let numeric = numeric_gradient(
        |x| {
            let mut q = p.clone();
            assign(&mut q, x);
            let (tape, root, _) = scalar(&q, false);
            tape.value(root).item()
        },
        &flatten(&p),
        FD_STEP,
    );
    let (mut tape, root, vars) = scalar(&p, true);
    let analytic = collect_grads(&mut tape, root, &vars);
    max_relative_error(&analytic, &numeric, FD_FLOOR)
}

pub fn random_tensor(rng: &mut SplitMix, dims: &[usize]) -> Tensor {
    let shape = attnmix_core::numerics::Shape::from_dims(dims).unwrap();
    Tensor::new(shape, rng.vec(shape.numel(), -1.0, 1.0)).unwrap()
}
