//! Operator network aggregating branch/trunk inner products over all layers:
//! `G(β)(x)_c = (1/l) Σ_k w_kc ⟨b_c^k(β), t^k(x)⟩ + b0_c`.

use rand::Rng;

use super::layers::{activate, Activation, Dense};
use crate::autodiff::{Axis, FieldEvaluator, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Branch width is `channels · width`: channel `c` reads columns
/// `c·width .. (c+1)·width` of every branch layer, all channels share the trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiOnet {
    pub branch: Vec<Dense>,
    pub trunk: Vec<Dense>,
    /// `[l, channels]` layer weights.
    pub w: usize,
    /// `[1, channels]` output bias.
    pub b0: usize,
    pub channels: usize,
    pub width: usize,
}

impl MultiOnet {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, width: usize, depth: usize, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if depth == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("operator network needs positive depth, width and channel count"));
        }
        let bw = channels * width;
        let mut branch = Vec::with_capacity(depth);
        let mut trunk = Vec::with_capacity(depth);
        for k in 0..depth {
            let fan_in = if k == 0 { d_in } else { bw };
            branch.push(Dense::glorot(store, &format!("{name}.branch{k}"), fan_in, bw, rng));
        }
        for k in 0..depth {
            let fan_in = if k == 0 { 2 } else { width };
            trunk.push(Dense::glorot(store, &format!("{name}.trunk{k}"), fan_in, width, rng));
        }
        let w = store.add(format!("{name}.w"), Tensor::full(depth, channels, 1.0));
        let b0 = store.add(format!("{name}.b0"), Tensor::zeros(1, channels));
        Ok(MultiOnet {
            branch,
            trunk,
            w,
            b0,
            channels,
            width,
        })
    }

    pub fn depth(&self) -> usize {
        self.trunk.len()
    }

    /// Trunk features `t^k(x)`, each `[P, width]`.
    pub fn trunk_features(&self, g: &mut Graph, store: &ParamStore, points: Var) -> Result<Vec<Var>> {
        let mut h = points;
        let mut out = Vec::with_capacity(self.depth());
        for layer in &self.trunk {
            h = layer.forward(g, store, h)?;
            h = activate(g, h, Activation::SiluSin)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Branch features `b^k(β)`, each `[B, channels·width]`.
    pub fn branch_features(&self, g: &mut Graph, store: &ParamStore, beta: Var) -> Result<Vec<Var>> {
        let mut h = beta;
        let mut out = Vec::with_capacity(self.depth());
        for layer in &self.branch {
            h = layer.forward(g, store, h)?;
            h = activate(g, h, Activation::SiluId)?;
            out.push(h);
        }
        Ok(out)
    }

    /// One `[B, P]` node per channel from precomputed features.
    ///
    /// Trunk features may have any row count `P`; passing row-means of the
    /// trunk features yields the spatial mean of the output (the map is
    /// affine in `t^k`).
    pub fn combine(&self, g: &mut Graph, store: &ParamStore, branch: &[Var], trunk: &[Var]) -> Result<Vec<Var>> {
        if branch.len() != trunk.len() || branch.len() != self.depth() {
            return Err(Error::invalid(format!(
                "branch depth {} and trunk depth {} must both equal {}",
                branch.len(),
                trunk.len(),
                self.depth()
            )));
        }
        let w = g.param(store, self.w);
        let b0 = g.param(store, self.b0);
        let inv_l = 1.0 / self.depth() as f64;
        // Σ_k w_kc b_kc t_kᵀ as one product [w_1c b_1c | …] [t_1 | …]ᵀ; the
        // weights scale the small branch blocks, never the [B, P] output.
        let t_all = g.concat_cols(trunk)?;
        let mut out = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let mut parts = Vec::with_capacity(self.depth());
            for (k, &bk) in branch.iter().enumerate() {
                let bkc = g.slice_cols(bk, c * self.width, (c + 1) * self.width)?;
                let wk = g.slice_rows(w, k, k + 1)?;
                let wkc = g.slice_cols(wk, c, c + 1)?;
                let wkc = g.scale(wkc, inv_l);
                parts.push(g.mul(bkc, wkc)?);
            }
            let b_all = g.concat_cols(&parts)?;
            let prod = g.matmul_t(b_all, false, t_all, true)?;
            let bc = g.slice_cols(b0, c, c + 1)?;
            out.push(g.add(prod, bc)?);
        }
        Ok(out)
    }

    /// Channel values at `points` (`[P, 2]`) for latents `beta` (`[B, d]`).
    pub fn eval(&self, g: &mut Graph, store: &ParamStore, beta: Var, points: Var) -> Result<Vec<Var>> {
        let t = self.trunk_features(g, store, points)?;
        let b = self.branch_features(g, store, beta)?;
        self.combine(g, store, &b, &t)
    }

    /// Spatial mean of every channel over `points`, each `[B, 1]`.
    pub fn eval_mean(&self, g: &mut Graph, store: &ParamStore, beta: Var, points: Var) -> Result<Vec<Var>> {
        let p = g.shape(points).0;
        let t = self.trunk_features(g, store, points)?;
        let t: Vec<Var> = t
            .into_iter()
            .map(|tk| {
                let s = g.sum_axis(tk, Axis::Rows);
                g.scale(s, 1.0 / p as f64)
            })
            .collect();
        let b = self.branch_features(g, store, beta)?;
        self.combine(g, store, &b, &t)
    }
}

/// A decoder with a fixed latent batch, usable with
/// [`spatial_gradient`](crate::autodiff::spatial_gradient).
pub struct OperatorField<'a> {
    pub net: &'a MultiOnet,
    pub store: &'a ParamStore,
    pub beta: Var,
}

impl FieldEvaluator for OperatorField<'_> {
    fn channels(&self) -> usize {
        self.net.channels
    }

    fn eval(&self, g: &mut Graph, points: &Tensor) -> Result<Vec<Var>> {
        let p = g.constant(points.clone());
        self.net.eval(g, self.store, self.beta, p)
    }
}
