mod common;

use common::{input_grad_error, param_grad_error, randn, rng};
use microdesign::autodiff::{AdamState, Axis, Graph, ParamStore, Tensor, Var};

const TOL: f64 = 1e-5;

/// `Σ out ⊙ W` with a fixed random `W`, so every output entry matters.
fn weighted(g: &mut Graph, out: Var, seed: u64) -> Var {
    let (r, c) = g.shape(out);
    let w = g.constant(randn(&mut rng(seed), r, c, 1.0));
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn check_unary(name: &str, x: Tensor, op: impl Fn(&mut Graph, Var) -> Var) {
    let err = input_grad_error(&x, 1e-6, |g, v| {
        let y = op(g, v);
        weighted(g, y, 99)
    });
    assert!(err < TOL, "{name}: {err}");
}

#[test]
fn elementwise_ops_match_central_differences() {
    let x = randn(&mut rng(1), 4, 5, 1.0);
    let pos = x.map(|v| v.abs() + 0.5);
    let away = x.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    check_unary("scale", x.clone(), |g, v| g.scale(v, -1.7));
    check_unary("add_scalar", x.clone(), |g, v| g.add_scalar(v, 0.3));
    check_unary("square", x.clone(), |g, v| g.square(v));
    check_unary("exp", x.clone(), |g, v| g.exp(v));
    check_unary("log", pos, |g, v| g.log(v));
    check_unary("sin", x.clone(), |g, v| g.sin(v));
    check_unary("tanh", x.clone(), |g, v| g.tanh(v));
    check_unary("sigmoid", x.clone(), |g, v| g.sigmoid(v));
    check_unary("silu", x.clone(), |g, v| g.silu(v));
    check_unary("abs", away.clone(), |g, v| g.abs(v));
    check_unary("clamp", away, |g, v| g.clamp(v, -0.5, 0.6));
}

#[test]
fn reductions_and_shape_ops_match_central_differences() {
    let x = randn(&mut rng(2), 4, 6, 1.0);
    check_unary("sum", x.clone(), |g, v| {
        let s = g.sum(v);
        g.square(s)
    });
    check_unary("mean", x.clone(), |g, v| {
        let s = g.mean(v);
        g.exp(s)
    });
    check_unary("sum_axis rows", x.clone(), |g, v| g.sum_axis(v, Axis::Rows));
    check_unary("sum_axis cols", x.clone(), |g, v| g.sum_axis(v, Axis::Cols));
    check_unary("slice_cols", x.clone(), |g, v| g.slice_cols(v, 1, 4).unwrap());
    check_unary("slice_rows", x.clone(), |g, v| g.slice_rows(v, 2, 4).unwrap());
    check_unary("concat_cols", x.clone(), |g, v| {
        let s = g.sin(v);
        g.concat_cols(&[v, s]).unwrap()
    });
    check_unary("concat_rows", x.clone(), |g, v| {
        let s = g.square(v);
        g.concat_rows(&[s, v]).unwrap()
    });
    let row = randn(&mut rng(3), 1, 6, 1.0);
    check_unary("broadcast", row, |g, v| g.broadcast(v, 5, 6).unwrap());
}

#[test]
fn binary_ops_with_broadcasting_match_central_differences() {
    let a = randn(&mut rng(4), 3, 5, 1.0);
    for (name, shape) in [("full", (3, 5)), ("row", (1, 5)), ("col", (3, 1)), ("scalar", (1, 1))] {
        let b = randn(&mut rng(5), shape.0, shape.1, 1.0);
        for op in 0..3 {
            let f = |g: &mut Graph, x: Var, y: Var| match op {
                0 => g.add(x, y).unwrap(),
                1 => g.sub(x, y).unwrap(),
                _ => g.mul(x, y).unwrap(),
            };
            let bc = b.clone();
            let err_a = input_grad_error(&a, 1e-6, |g, v| {
                let w = g.constant(bc.clone());
                let o = f(g, v, w);
                weighted(g, o, 7)
            });
            let ac = a.clone();
            let err_b = input_grad_error(&b, 1e-6, |g, v| {
                let w = g.constant(ac.clone());
                let o = f(g, w, v);
                weighted(g, o, 7)
            });
            assert!(err_a < TOL && err_b < TOL, "{name} op {op}: {err_a} {err_b}");
        }
    }
}

#[test]
fn matmul_all_transpose_flags_match_central_differences() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { randn(&mut rng(8), 4, 3, 1.0) } else { randn(&mut rng(8), 3, 4, 1.0) };
        let b = if tb { randn(&mut rng(9), 5, 4, 1.0) } else { randn(&mut rng(9), 4, 5, 1.0) };
        let bc = b.clone();
        let ea = input_grad_error(&a, 1e-6, |g, v| {
            let w = g.constant(bc.clone());
            let o = g.matmul_t(v, ta, w, tb).unwrap();
            weighted(g, o, 11)
        });
        let ac = a.clone();
        let eb = input_grad_error(&b, 1e-6, |g, v| {
            let w = g.constant(ac.clone());
            let o = g.matmul_t(w, ta, v, tb).unwrap();
            weighted(g, o, 11)
        });
        assert!(ea < TOL && eb < TOL, "({ta},{tb}): {ea} {eb}");
    }
}

#[test]
fn three_layer_mlp_parameter_gradients() {
    let mut store = ParamStore::new();
    let mut r = rng(12);
    let sizes = [6, 10, 8, 3];
    let mut ids = Vec::new();
    for i in 0..3 {
        let w = store.add_glorot(format!("w{i}"), sizes[i], sizes[i + 1], &mut r);
        let b = store.add(format!("b{i}"), randn(&mut r, 1, sizes[i + 1], 0.1));
        ids.push((w, b));
    }
    let x = randn(&mut rng(13), 5, 6, 1.0);
    let err = param_grad_error(&store, 1e-6, usize::MAX, |g, s| {
        let mut h = g.constant(x.clone());
        for (i, &(w, b)) in ids.iter().enumerate() {
            let wv = g.param(s, w);
            let bv = g.param(s, b);
            h = g.matmul(h, wv).unwrap();
            h = g.add(h, bv).unwrap();
            if i < 2 {
                h = g.tanh(h);
            }
        }
        let sq = g.square(h);
        g.mean(sq)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn unused_parameters_receive_zero_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::row(vec![1.0, 2.0]));
    let _unused = store.add("b", Tensor::row(vec![3.0]));
    let mut g = Graph::new();
    let v = g.param(&store, a);
    let l = g.sum(v);
    let grads = g.param_grads(l, &store).unwrap();
    assert_eq!(grads[0].data(), &[1.0, 1.0]);
    assert_eq!(grads[1].data(), &[0.0]);
}

#[test]
fn adam_is_bit_deterministic() {
    let run = || {
        let mut p = vec![randn(&mut rng(20), 3, 3, 1.0)];
        let mut st = AdamState::new(&p);
        for i in 0..25 {
            let g = vec![randn(&mut rng(100 + i), 3, 3, 1.0)];
            st.step(&mut p, &g, 1e-2).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}
