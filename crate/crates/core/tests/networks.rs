mod common;

use common::{param_grad_error, randn, randomize, rng};
use microdesign::autodiff::{spatial_gradient, Graph, ParamStore, Tensor, H_SPATIAL};
use microdesign::microgen::Microstructure;
use microdesign::networks::*;
use microdesign::Task;

fn tiny(task: Task) -> ModelConfig {
    ModelConfig {
        k: 4,
        task,
        d_beta: 4,
        encoder_hidden: vec![8],
        mu_width: 8,
        mu_depth: 2,
        u_width: 8,
        u_depth: 2,
        flow_steps: 3,
        flow_hidden: 8,
        flow_layers: 2,
    }
}

#[test]
fn custom_activations_at_known_points() {
    assert!(silu_sin_scalar(0.0).abs() < 1e-15);
    assert_eq!(silu_id_scalar(0.0), 0.0);
    assert!((silu_sin_scalar(1.0) - 1.0).abs() < 1e-15);
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.0, 1.0, -0.3]));
    let y = silu_sin(&mut g, x).unwrap();
    let z = silu_id(&mut g, x).unwrap();
    for (i, &v) in [0.0, 1.0, -0.3].iter().enumerate() {
        assert!((g.value(y).data()[i] - silu_sin_scalar(v)).abs() < 1e-15);
        assert!((g.value(z).data()[i] - silu_id_scalar(v)).abs() < 1e-15);
    }
}

#[test]
fn encoder_range_zero_head_and_determinism() {
    let mut m = Model::new(tiny(Task::Property), 3).unwrap();
    let mut r = rng(1);
    let micro: Vec<Microstructure> = (0..5)
        .map(|s| Microstructure::new(4, (0..16).map(|p| ((p * 7 + s) % 3 == 0) as u8).collect()).unwrap())
        .collect();
    let refs: Vec<&Microstructure> = micro.iter().collect();
    randomize(&mut m.store, 9, 0.3);
    let b = m.encode_micro(&refs).unwrap();
    assert!(b.data().iter().all(|v| v.abs() < 1.0));
    assert_eq!(b, m.encode_micro(&refs).unwrap());
    let last = m.encoder.layers.last().unwrap().clone();
    *m.store.get_mut(last.w) = Tensor::zeros(last.fan_in, last.fan_out);
    *m.store.get_mut(last.b) = Tensor::zeros(1, last.fan_out);
    assert!(m.encode_micro(&refs).unwrap().data().iter().all(|&v| v == 0.0));
    let _ = randn(&mut r, 1, 1, 1.0);
}

#[test]
fn zero_layer_weights_give_bias_only() {
    let mut m = Model::new(tiny(Task::Property), 5).unwrap();
    let net = m.u_decoder.clone();
    *m.store.get_mut(net.w) = Tensor::zeros(2, 6);
    let b0 = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    *m.store.get_mut(net.b0) = Tensor::row(b0.clone());
    let beta = randn(&mut rng(2), 3, 4, 1.0);
    let pts = randn(&mut rng(3), 7, 2, 0.3);
    let out = m.response_values(&beta, &pts).unwrap();
    assert_eq!(out.len(), 6);
    for (c, t) in out.iter().enumerate() {
        assert_eq!(t.dims(), (3, 7));
        assert!(t.data().iter().all(|&v| v == b0[c]));
    }
}

#[test]
fn channel_counts_per_task() {
    let beta = Tensor::zeros(1, 4);
    let pts = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
    assert_eq!(Model::new(tiny(Task::Property), 1).unwrap().response_values(&beta, &pts).unwrap().len(), 6);
    assert_eq!(Model::new(tiny(Task::Field), 1).unwrap().response_values(&beta, &pts).unwrap().len(), 1);
}

#[test]
fn single_layer_is_deeponet_form() {
    let mut store = ParamStore::new();
    let net = MultiOnet::new(&mut store, "n", 3, 5, 1, 1, &mut rng(4)).unwrap();
    randomize(&mut store, 5, 0.7);
    let beta = randn(&mut rng(6), 2, 3, 1.0);
    let pts = randn(&mut rng(7), 4, 2, 0.5);
    let mut g = Graph::frozen();
    let b = g.constant(beta.clone());
    let p = g.constant(pts.clone());
    let o = net.eval(&mut g, &store, b, p).unwrap()[0];
    let out = g.value(o).clone();
    // w·⟨SiLU_Id(βV + c), SiLU_Sin(xW + d)⟩ + b0, evaluated by hand.
    let dense = |x: &[f64], d: &Dense, act: fn(f64) -> f64| -> Vec<f64> {
        let (w, bias) = (store.get(d.w), store.get(d.b));
        (0..d.fan_out)
            .map(|o| act((0..d.fan_in).map(|i| x[i] * w.get(i, o)).sum::<f64>() + bias.data()[o]))
            .collect()
    };
    for s in 0..2 {
        let bf = dense(beta.row_slice(s), &net.branch[0], silu_id_scalar);
        for q in 0..4 {
            let tf = dense(pts.row_slice(q), &net.trunk[0], silu_sin_scalar);
            let dot: f64 = bf.iter().zip(&tf).map(|(a, b)| a * b).sum();
            let want = store.get(net.w).item() * dot + store.get(net.b0).item();
            assert!((out.get(s, q) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn two_layer_hand_trace() {
    let mut store = ParamStore::new();
    let net = MultiOnet::new(&mut store, "n", 2, 2, 2, 1, &mut rng(0)).unwrap();
    let set = |store: &mut ParamStore, id: usize, r: usize, c: usize, v: &[f64]| {
        *store.get_mut(id) = Tensor::matrix(r, c, v.to_vec()).unwrap();
    };
    set(&mut store, net.branch[0].w, 2, 2, &[0.5, -1.0, 0.25, 2.0]);
    set(&mut store, net.branch[0].b, 1, 2, &[0.1, 0.0]);
    set(&mut store, net.branch[1].w, 2, 2, &[1.0, 0.0, -0.5, 1.0]);
    set(&mut store, net.branch[1].b, 1, 2, &[0.0, -0.2]);
    set(&mut store, net.trunk[0].w, 2, 2, &[1.0, 0.5, 0.0, -1.0]);
    set(&mut store, net.trunk[0].b, 1, 2, &[0.0, 0.3]);
    set(&mut store, net.trunk[1].w, 2, 2, &[0.2, 0.0, 0.0, 0.4]);
    set(&mut store, net.trunk[1].b, 1, 2, &[0.1, 0.1]);
    set(&mut store, net.w, 2, 1, &[2.0, -1.0]);
    set(&mut store, net.b0, 1, 1, &[0.05]);
    // β = (1, −1), x = (0.25, 0.75).
    let si = silu_id_scalar;
    let ss = silu_sin_scalar;
    let b1 = [si(0.5 * 1.0 + 0.25 * -1.0 + 0.1), si(-1.0 * 1.0 + 2.0 * -1.0 + 0.0)];
    let b2 = [si(b1[0] * 1.0 + b1[1] * -0.5), si(b1[0] * 0.0 + b1[1] * 1.0 - 0.2)];
    let t1 = [ss(0.25 * 1.0 + 0.75 * 0.0), ss(0.25 * 0.5 + 0.75 * -1.0 + 0.3)];
    let t2 = [ss(t1[0] * 0.2 + 0.1), ss(t1[1] * 0.4 + 0.1)];
    let want = 0.5 * (2.0 * (b1[0] * t1[0] + b1[1] * t1[1]) - (b2[0] * t2[0] + b2[1] * t2[1])) + 0.05;
    let mut g = Graph::frozen();
    let b = g.constant(Tensor::row(vec![1.0, -1.0]));
    let p = g.constant(Tensor::row(vec![0.25, 0.75]));
    let out = net.eval(&mut g, &store, b, p).unwrap()[0];
    assert!((g.value(out).item() - want).abs() < 1e-14);
}

#[test]
fn mean_of_outputs_equals_mean_trunk_evaluation() {
    let m = Model::new(tiny(Task::Property), 8).unwrap();
    let beta = randn(&mut rng(1), 3, 4, 0.5);
    let pts = pixel_centers(8);
    let full = m.response_values(&beta, &pts).unwrap();
    let mut g = Graph::frozen();
    let b = g.constant(beta);
    let p = g.constant(pts);
    let means = m.u_decoder.eval_mean(&mut g, &m.store, b, p).unwrap();
    for (c, &mv) in means.iter().enumerate() {
        for s in 0..3 {
            let brute = full[c].row_slice(s).iter().sum::<f64>() / 64.0;
            assert!((g.value(mv).get(s, 0) - brute).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_logits_give_half_and_threshold_is_idempotent() {
    let mut m = Model::new(tiny(Task::Field), 2).unwrap();
    let net = m.mu_decoder.clone();
    *m.store.get_mut(net.w) = Tensor::zeros(2, 1);
    let beta = randn(&mut rng(3), 2, 4, 1.0);
    let p = m.decode_probabilities(&beta).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
    randomize(&mut m.store, 4, 1.0);
    let p = m.decode_probabilities(&beta).unwrap();
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let d = m.decode_microstructures(&beta).unwrap();
    for (r, micro) in d.iter().enumerate() {
        let again: Vec<u8> = micro.phase().iter().map(|&v| u8::from(v as f64 >= 0.5)).collect();
        assert_eq!(again, micro.phase());
        for (q, &v) in micro.phase().iter().enumerate() {
            assert_eq!(v, u8::from(p.get(r, q) >= 0.5));
        }
    }
}

#[test]
fn stencil_gradient_converges_at_second_order() {
    let mut store = ParamStore::new();
    let net = MultiOnet::new(&mut store, "n", 2, 6, 2, 1, &mut rng(11)).unwrap();
    let pts = Tensor::matrix(3, 2, vec![0.3, 0.6, 0.55, 0.2, 0.71, 0.44]).unwrap();
    let grad_at = |h: f64| {
        let mut g = Graph::frozen();
        let beta = g.constant(Tensor::row(vec![0.4, -0.7]));
        let f = OperatorField { net: &net, store: &store, beta };
        let (dx, dy) = spatial_gradient(&mut g, &f, 0, &pts, h).unwrap();
        (g.value(dx).clone(), g.value(dy).clone())
    };
    let h = 4.0 * H_SPATIAL;
    let (a, b, c) = (grad_at(h), grad_at(h / 2.0), grad_at(h / 4.0));
    for (t1, t2, t3) in [(&a.0, &b.0, &c.0), (&a.1, &b.1, &c.1)] {
        for i in 0..3 {
            let d1 = t1.data()[i] - t2.data()[i];
            let d2 = t2.data()[i] - t3.data()[i];
            let ratio = d1 / d2;
            assert!((ratio - 4.0).abs() < 0.2, "Richardson ratio {ratio}");
        }
    }
}

#[test]
fn decoder_and_encoder_parameter_gradients_match_differences() {
    let mut m = Model::new(tiny(Task::Property), 12).unwrap();
    randomize(&mut m.store, 13, 0.5);
    let x = Tensor::from_fn(2, 16, |i, j| ((i * 5 + j * 3) % 2) as f64);
    let pts = randn(&mut rng(14), 5, 2, 0.3);
    let err = param_grad_error(&m.store, 1e-5, 6, |g, store| {
        let mm = Model {
            store: store.clone(),
            ..m.clone()
        };
        let xv = g.constant(x.clone());
        let beta = mm.encoder.forward(g, store, xv).unwrap();
        let pv = g.constant(pts.clone());
        let mu = mm.mu_decoder.eval(g, store, beta, pv).unwrap()[0];
        let u = mm.u_decoder.eval(g, store, beta, pv).unwrap();
        let mut acc = g.mean(mu);
        for c in u {
            let s = g.square(c);
            let s = g.mean(s);
            acc = g.add(acc, s).unwrap();
        }
        let lp = mm.flow.log_density(g, store, beta).unwrap();
        let lp = g.mean(lp);
        g.add(acc, lp).unwrap()
    });
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut m = Model::new(tiny(Task::Field), 21).unwrap();
    randomize(&mut m.store, 22, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    m.save(&a, serde_json::json!({"note": 1})).unwrap();
    let (loaded, extra) = Model::load(&a).unwrap();
    assert_eq!(extra["note"], 1);
    assert_eq!(loaded.store.tensors(), m.store.tensors());
    loaded.save(&b, extra).unwrap();
    for f in ["model.json", "weights.f64"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    std::fs::write(a.join("weights.f64"), [0u8; 10]).unwrap();
    assert!(Model::load(&a).is_err());
}
