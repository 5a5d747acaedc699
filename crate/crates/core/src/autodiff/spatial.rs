//! Finite-difference spatial derivatives of differentiable field evaluators.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default stencil step for decoder gradients.
pub const H_SPATIAL: f64 = 1e-3;

/// A field over the unit square that can be evaluated inside a [`Graph`].
///
/// `eval` receives `P` points as a `[P, 2]` tensor of `(x, y)` rows and
/// returns one `[S, P]` node per channel, where `S` is the number of field
/// instances evaluated together (e.g. the samples of a mini-batch).
pub trait FieldEvaluator {
    fn channels(&self) -> usize;
    fn eval(&self, g: &mut Graph, points: &Tensor) -> Result<Vec<Var>>;
}

/// `∂f/∂x` and `∂f/∂y` of `channel` at `points`, as `[S, P]` nodes.
///
/// Central differences with step `h`; a point closer than `h` to an edge uses
/// the one-sided difference pointing into the domain. The stencil is part of
/// the graph, so the result stays differentiable in whatever `field` depends
/// on.
pub fn spatial_gradient(
    g: &mut Graph,
    field: &dyn FieldEvaluator,
    channel: usize,
    points: &Tensor,
    h: f64,
) -> Result<(Var, Var)> {
    Ok(spatial_gradients(g, field, &[channel], points, h)?[0])
}

/// [`spatial_gradient`] for several channels from one field evaluation.
pub fn spatial_gradients(
    g: &mut Graph,
    field: &dyn FieldEvaluator,
    channels: &[usize],
    points: &Tensor,
    h: f64,
) -> Result<Vec<(Var, Var)>> {
    if let Some(&c) = channels.iter().find(|&&c| c >= field.channels()) {
        return Err(Error::invalid(format!("channel {c} out of range for a {}-channel field", field.channels())));
    }
    let n = points.rows();
    // Stencil rows: x+, y+, x−, y− blocks of n points each.
    let mut shifted = Vec::with_capacity(8 * n);
    let mut inv = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut offsets = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for axis in 0..2 {
        for i in 0..n {
            let x = points.get(i, axis);
            let hp = if x + h <= 1.0 { h } else { 0.0 };
            let hm = if x - h >= 0.0 { h } else { 0.0 };
            offsets[axis].push((hp, hm));
            inv[axis].push(1.0 / (hp + hm));
        }
    }
    for sign in [1.0, -1.0] {
        for (axis, offs) in offsets.iter().enumerate() {
            for (i, &(hp, hm)) in offs.iter().enumerate() {
                let mut p = [points.get(i, 0), points.get(i, 1)];
                p[axis] += if sign > 0.0 { hp } else { -hm };
                shifted.extend_from_slice(&p);
            }
        }
    }
    let stencil = Tensor::matrix(4 * n, 2, shifted)?;
    let vals = field.eval(g, &stencil)?;
    let inv_x = g.constant(Tensor::row(inv[0].clone()));
    let inv_y = g.constant(Tensor::row(inv[1].clone()));
    let mut out = Vec::with_capacity(channels.len());
    for &c in channels {
        let v = vals[c];
        let mut pair = [v, v];
        for (axis, inv) in [inv_x, inv_y].into_iter().enumerate() {
            let fp = g.slice_cols(v, axis * n, (axis + 1) * n)?;
            let fm = g.slice_cols(v, (2 + axis) * n, (3 + axis) * n)?;
            let diff = g.sub(fp, fm)?;
            pair[axis] = g.mul(diff, inv)?;
        }
        out.push((pair[0], pair[1]));
    }
    Ok(out)
}

/// A field given by a plain closure (no learnable dependence); handy for
/// manufactured solutions and interpolated reference fields.
pub struct FnField<F: Fn(f64, f64) -> f64> {
    pub f: F,
}

impl<F: Fn(f64, f64) -> f64> FieldEvaluator for FnField<F> {
    fn channels(&self) -> usize {
        1
    }

    fn eval(&self, g: &mut Graph, points: &Tensor) -> Result<Vec<Var>> {
        let vals: Vec<f64> = (0..points.rows()).map(|i| (self.f)(points.get(i, 0), points.get(i, 1))).collect();
        Ok(vec![g.constant(Tensor::row(vals))])
    }
}
