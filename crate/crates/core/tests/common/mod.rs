#![allow(dead_code)]

use microdesign::autodiff::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

/// Overwrite every parameter with `N(0, scale²)` entries.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = scale * r.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Relative error with a small floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between analytic parameter gradients of
/// `f(graph, store) -> scalar` and central differences with step `h`.
/// Checks at most `per_tensor` entries of each parameter tensor.
pub fn param_grad_error(
    store: &ParamStore,
    h: f64,
    per_tensor: usize,
    f: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    let grads = g.param_grads(loss, store).unwrap();
    let eval = |s: &ParamStore| {
        let mut g = Graph::frozen();
        let l = f(&mut g, s);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for id in 0..store.len() {
        let n = store.get(id).len();
        let stride = (n / per_tensor).max(1);
        for e in (0..n).step_by(stride) {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + h;
            let fp = eval(&work);
            work.get_mut(id).data_mut()[e] = orig - h;
            let fm = eval(&work);
            work.get_mut(id).data_mut()[e] = orig;
            let num = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(grads[id].data()[e], num));
        }
    }
    worst
}

/// Same as [`param_grad_error`] for the gradient with respect to an input
/// tensor `x`.
pub fn input_grad_error(x: &Tensor, h: f64, f: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let loss = f(&mut g, v);
    let grads = g.backward(loss).unwrap();
    let gx = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
    let eval = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let l = f(&mut g, v);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    let mut work = x.clone();
    for e in 0..x.len() {
        let orig = x.data()[e];
        work.data_mut()[e] = orig + h;
        let fp = eval(&work);
        work.data_mut()[e] = orig - h;
        let fm = eval(&work);
        work.data_mut()[e] = orig;
        worst = worst.max(rel_err(gx.data()[e], (fp - fm) / (2.0 * h)));
    }
    worst
}
