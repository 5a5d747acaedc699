use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
    Tanh,
    /// `SiLU(sin(πx + π)) + x`.
    SiluSin,
    /// `SiLU(x) + x`.
    SiluId,
}

pub fn silu_sin(g: &mut Graph, x: Var) -> Result<Var> {
    let a = g.scale(x, PI);
    let a = g.add_scalar(a, PI);
    let a = g.sin(a);
    let a = g.silu(a);
    g.add(a, x)
}

pub fn silu_id(g: &mut Graph, x: Var) -> Result<Var> {
    let a = g.silu(x);
    g.add(a, x)
}

pub fn activate(g: &mut Graph, x: Var, act: Activation) -> Result<Var> {
    Ok(match act {
        Activation::Identity => x,
        Activation::Silu => g.silu(x),
        Activation::Tanh => g.tanh(x),
        Activation::SiluSin => silu_sin(g, x)?,
        Activation::SiluId => silu_id(g, x)?,
    })
}

/// Scalar reference versions of the activations.
pub fn silu_scalar(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_sin_scalar(x: f64) -> f64 {
    silu_scalar((PI * x + PI).sin()) + x
}

pub fn silu_id_scalar(x: f64) -> f64 {
    silu_scalar(x) + x
}

/// Affine layer `x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn glorot(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Dense { w, b, fan_in, fan_out }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Dense { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Plain feed-forward stack: `act` on hidden layers, `out_act` on the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub act: Activation,
    pub out_act: Activation,
}

impl Mlp {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            h = activate(g, h, if i == last { self.out_act } else { self.act })?;
        }
        Ok(h)
    }
}
