//! RealNVP prior: affine coupling steps mapping `β` to standard-normal `z`.

use std::f64::consts::PI;

use rand::Rng;

use super::layers::{Activation, Dense, Mlp};
use crate::autodiff::{Axis, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingStep {
    pub scale: Mlp,
    pub shift: Mlp,
    /// `[1, 1]` learnable bound on `|s|`.
    pub bound: usize,
    /// When set, the second half conditions the first.
    pub flip: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub steps: Vec<CouplingStep>,
    pub dim: usize,
}

fn coupling_net(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Mlp {
    let mut dense = Vec::with_capacity(layers + 1);
    let mut fan_in = d_in;
    for i in 0..layers {
        dense.push(Dense::glorot(store, &format!("{name}.{i}"), fan_in, hidden, rng));
        fan_in = hidden;
    }
    // Zero output layer: the step starts as the identity.
    dense.push(Dense::zeros(store, &format!("{name}.{layers}"), fan_in, d_out));
    Mlp {
        layers: dense,
        act: Activation::Silu,
        out_act: Activation::Identity,
    }
}

impl Flow {
    pub fn new(store: &mut ParamStore, dim: usize, steps: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("flow dimension must be at least 2, got {dim}")));
        }
        let half = dim / 2;
        let mut out = Vec::with_capacity(steps);
        for s in 0..steps {
            let flip = s % 2 == 1;
            let (d_cond, d_trans) = if flip { (dim - half, half) } else { (half, dim - half) };
            let scale = coupling_net(store, &format!("flow{s}.scale"), d_cond, d_trans, hidden, layers, rng);
            let shift = coupling_net(store, &format!("flow{s}.shift"), d_cond, d_trans, hidden, layers, rng);
            let bound = store.add(format!("flow{s}.bound"), Tensor::scalar(1.0));
            out.push(CouplingStep { scale, shift, bound, flip });
        }
        Ok(Flow { steps: out, dim })
    }

    fn split(&self, flip: bool) -> ((usize, usize), (usize, usize)) {
        let half = self.dim / 2;
        let (a, b) = ((0, half), (half, self.dim));
        if flip {
            (b, a)
        } else {
            (a, b)
        }
    }

    fn scale_shift(&self, g: &mut Graph, store: &ParamStore, step: &CouplingStep, cond: Var) -> Result<(Var, Var)> {
        let raw = step.scale.forward(g, store, cond)?;
        let raw = g.tanh(raw);
        let bound = g.param(store, step.bound);
        let s = g.mul(raw, bound)?;
        let t = step.shift.forward(g, store, cond)?;
        Ok((s, t))
    }

    /// `(z, logdet)` for rows of `beta` (`[B, d]`); logdet is `[B, 1]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, beta: Var) -> Result<(Var, Var)> {
        let (b, d) = g.shape(beta);
        if d != self.dim {
            return Err(Error::Shape {
                op: "flow_forward",
                lhs: vec![b, d],
                rhs: vec![b, self.dim],
            });
        }
        let mut x = beta;
        let mut logdet = g.constant(Tensor::zeros(b, 1));
        for step in &self.steps {
            let ((c0, c1), (t0, t1)) = self.split(step.flip);
            let cond = g.slice_cols(x, c0, c1)?;
            let trans = g.slice_cols(x, t0, t1)?;
            let (s, t) = self.scale_shift(g, store, step, cond)?;
            let es = g.exp(s);
            let y = g.mul(trans, es)?;
            let y = g.add(y, t)?;
            let ls = g.sum_axis(s, Axis::Cols);
            logdet = g.add(logdet, ls)?;
            x = if step.flip { g.concat_cols(&[y, cond])? } else { g.concat_cols(&[cond, y])? };
        }
        Ok((x, logdet))
    }

    /// Inverse map `z → β`, evaluated without parameter gradients.
    pub fn inverse(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.dim {
            return Err(Error::Shape {
                op: "flow_inverse",
                lhs: z.shape().to_vec(),
                rhs: vec![z.rows(), self.dim],
            });
        }
        let mut g = Graph::frozen();
        let mut y = g.constant(z.clone());
        for step in self.steps.iter().rev() {
            let ((c0, c1), (t0, t1)) = self.split(step.flip);
            let cond = g.slice_cols(y, c0, c1)?;
            let trans = g.slice_cols(y, t0, t1)?;
            let (s, t) = self.scale_shift(&mut g, store, step, cond)?;
            let diff = g.sub(trans, t)?;
            let ns = g.neg(s);
            let e = g.exp(ns);
            let x = g.mul(diff, e)?;
            y = if step.flip { g.concat_cols(&[x, cond])? } else { g.concat_cols(&[cond, x])? };
        }
        let out = g.value(y).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("flow inverse".into()));
        }
        Ok(out)
    }

    /// `log p(β) = −½‖f(β)‖² + logdet − (d/2)·log 2π`, `[B, 1]`.
    pub fn log_density(&self, g: &mut Graph, store: &ParamStore, beta: Var) -> Result<Var> {
        let kl = self.log_density_unnormalized(g, store, beta)?;
        Ok(g.add_scalar(kl, -0.5 * self.dim as f64 * (2.0 * PI).ln()))
    }

    /// `−½‖f(β)‖² + logdet`, `[B, 1]` (the constant is dropped).
    pub fn log_density_unnormalized(&self, g: &mut Graph, store: &ParamStore, beta: Var) -> Result<Var> {
        let (z, logdet) = self.forward(g, store, beta)?;
        let sq = g.square(z);
        let sq = g.sum_axis(sq, Axis::Cols);
        let half = g.scale(sq, -0.5);
        g.add(half, logdet)
    }
}
