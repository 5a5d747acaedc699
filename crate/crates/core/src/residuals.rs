//! Weak-form residuals of `∇·(μ∇T) = 0` against compactly supported
//! Wendland test functions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{spatial_gradients, Axis, FieldEvaluator, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::microgen::Microstructure;
use crate::seed::derive_seed;
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualConfig {
    /// Test functions per draw.
    pub m: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Gauss–Legendre nodes per axis.
    pub n_q: usize,
    /// Interior collocation points for the flux-consistency penalty.
    pub n_interior: usize,
    /// Collocation points per boundary edge.
    pub n_boundary: usize,
    pub seed: u64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            m: 100,
            r_min: 0.05,
            r_max: 0.25,
            n_q: 12,
            n_interior: 256,
            n_boundary: 64,
            seed: 0,
        }
    }
}

impl ResidualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_q == 0 {
            return Err(Error::invalid("need at least one test function and one quadrature node"));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return Err(Error::invalid(format!("need 0 < r_min <= r_max, got [{}, {}]", self.r_min, self.r_max)));
        }
        if self.r_max >= 0.5 {
            return Err(Error::invalid(format!("r_max = {} leaves no admissible center", self.r_max)));
        }
        Ok(())
    }
}

/// `M` test functions, deterministic in `(cfg.seed, epoch, index)`.
///
/// Radius first, uniform on `[r_min, r_max]`; then the center, uniform on
/// `[R, 1 − R]²` so the support stays inside the unit square.
pub fn make_test_functions(cfg: &ResidualConfig, epoch: u64, index: u64) -> Result<Vec<TestFunction>> {
    cfg.validate()?;
    let seed = derive_seed(derive_seed(cfg.seed, epoch), index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..cfg.m)
        .map(|_| {
            let radius = if cfg.r_max > cfg.r_min {
                rng.random_range(cfg.r_min..cfg.r_max)
            } else {
                cfg.r_min
            };
            let cx = rng.random_range(radius..=1.0 - radius);
            let cy = rng.random_range(radius..=1.0 - radius);
            TestFunction {
                center: [cx, cy],
                radius,
            }
        })
        .collect())
}

/// Wendland kernel `(1−r)⁴(4r+1)` and its radial derivative `−20r(1−r)³`.
pub fn wendland(r: f64) -> (f64, f64) {
    if r >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - r;
    (s.powi(4) * (4.0 * r + 1.0), -20.0 * r * s.powi(3))
}

impl TestFunction {
    /// Value and gradient at `p`.
    pub fn eval(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dist = (dx * dx + dy * dy).sqrt();
        let r = dist / self.radius;
        let (w, dw) = wendland(r);
        if dist == 0.0 || r >= 1.0 {
            return (w, [0.0, 0.0]);
        }
        let f = dw / (self.radius * dist);
        (w, [f * dx, f * dy])
    }
}

/// Values and gradients of `w` at `points`.
pub fn test_eval(w: &TestFunction, points: &[[f64; 2]]) -> (Vec<f64>, Vec<[f64; 2]>) {
    points.iter().map(|&p| w.eval(p)).unzip()
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect();
    if n == 1 {
        out = vec![(0.0, 2.0)];
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Quadrature data for a set of test functions.
///
/// Each function gets `n_q × n_q` tensor-product nodes over its bounding
/// square; nodes outside the support ball (where the kernel vanishes) are
/// dropped. `assign[q, m] = 1` when node `q` belongs to function `m`.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub functions: Vec<TestFunction>,
    /// `[Q, 2]` node coordinates.
    pub points: Tensor,
    /// `[1, Q]` quadrature weight times `∂w/∂x` at each node.
    pub wdx: Tensor,
    pub wdy: Tensor,
    /// `[1, Q]` quadrature weight times `w`.
    pub wval: Tensor,
    pub assign: Tensor,
}

impl TestSet {
    pub fn new(functions: Vec<TestFunction>, n_q: usize) -> Result<Self> {
        if functions.is_empty() || n_q == 0 {
            return Err(Error::invalid("test set needs functions and quadrature nodes"));
        }
        let gl = gauss_legendre(n_q);
        let mut pts = Vec::new();
        let (mut wdx, mut wdy, mut wval, mut owner) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (m, f) in functions.iter().enumerate() {
            let r = f.radius;
            for &(u, wu) in &gl {
                for &(v, wv) in &gl {
                    let p = [f.center[0] + r * u, f.center[1] + r * v];
                    let (val, grad) = f.eval(p);
                    if val == 0.0 && grad == [0.0, 0.0] {
                        continue;
                    }
                    let wq = r * r * wu * wv;
                    pts.extend_from_slice(&p);
                    wdx.push(wq * grad[0]);
                    wdy.push(wq * grad[1]);
                    wval.push(wq * val);
                    owner.push(m);
                }
            }
        }
        let q = owner.len();
        let m = functions.len();
        let mut assign = Tensor::zeros(q, m);
        for (i, &o) in owner.iter().enumerate() {
            assign.set(i, o, 1.0);
        }
        Ok(TestSet {
            functions,
            points: Tensor::matrix(q, 2, pts)?,
            wdx: Tensor::row(wdx),
            wdy: Tensor::row(wdy),
            wval: Tensor::row(wval),
            assign,
        })
    }

    pub fn nodes(&self) -> usize {
        self.points.rows()
    }

    /// `μ̂` at every node by nearest-pixel lookup, `[B, Q]`.
    pub fn mu_at_nodes(&self, micro: &[&Microstructure]) -> Tensor {
        mu_at(micro, &self.points)
    }

    /// `∫ (vx ∂w/∂x + vy ∂w/∂y)` per function from node values `[S, Q]`;
    /// returns `[S, M]`.
    pub fn integrate_grad(&self, g: &mut Graph, vx: Var, vy: Var) -> Result<Var> {
        let ax = g.constant(self.wdx.clone());
        let ay = g.constant(self.wdy.clone());
        let a = g.mul(vx, ax)?;
        let b = g.mul(vy, ay)?;
        let s = g.add(a, b)?;
        let assign = g.constant(self.assign.clone());
        g.matmul(s, assign)
    }

    /// `∫ v w` per function from node values `[S, Q]`; returns `[S, M]`.
    pub fn integrate_value(&self, g: &mut Graph, v: Var) -> Result<Var> {
        let wv = g.constant(self.wval.clone());
        let s = g.mul(v, wv)?;
        let assign = g.constant(self.assign.clone());
        g.matmul(s, assign)
    }
}

/// Nearest-pixel conductivity of each microstructure at `points`, `[B, P]`.
pub fn mu_at(micro: &[&Microstructure], points: &Tensor) -> Tensor {
    let p = points.rows();
    Tensor::from_fn(micro.len(), p, |b, i| micro[b].conductivity_at(points.get(i, 0), points.get(i, 1)))
}

/// Weak residual `r = ∫ (μ̂ ∇u·∇w − s w)` of channel `channel` of `field`
/// for a single test function. `field` must evaluate one instance (`S = 1`).
#[allow(clippy::too_many_arguments)]
pub fn weak_residual(
    g: &mut Graph,
    micro: &Microstructure,
    field: &dyn FieldEvaluator,
    channel: usize,
    w: &TestFunction,
    source: &dyn Fn(f64, f64) -> f64,
    n_q: usize,
    h: f64,
) -> Result<Var> {
    let set = TestSet::new(vec![*w], n_q)?;
    let (gx, gy) = spatial_gradients(g, field, &[channel], &set.points, h)?[0];
    let mu = g.constant(set.mu_at_nodes(&[micro]));
    let fx = g.mul(gx, mu)?;
    let fy = g.mul(gy, mu)?;
    let a = set.integrate_grad(g, fx, fy)?;
    let s: Vec<f64> = (0..set.nodes()).map(|i| source(set.points.get(i, 0), set.points.get(i, 1))).collect();
    let s = g.constant(Tensor::row(s));
    let b = set.integrate_value(g, s)?;
    g.sub(a, b)
}

/// Shared collocation points for penalty terms.
#[derive(Clone, Debug)]
pub struct Collocation {
    /// `[n_i, 2]` interior points.
    pub interior: Tensor,
    /// `[n_b, 2]` points on each edge, in order left, right, bottom, top.
    pub edges: [Tensor; 4],
}

impl Collocation {
    /// Uniform random interior points and evenly spaced edge points.
    pub fn new(n_interior: usize, n_boundary: usize, seed: u64) -> Result<Self> {
        if n_interior == 0 || n_boundary == 0 {
            return Err(Error::invalid("collocation counts must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let interior = Tensor::from_fn(n_interior, 2, |_, _| rng.random_range(0.0..1.0));
        let s = |i: usize| (i as f64 + 0.5) / n_boundary as f64;
        let edges = [
            Tensor::from_fn(n_boundary, 2, |i, c| if c == 0 { 0.0 } else { s(i) }),
            Tensor::from_fn(n_boundary, 2, |i, c| if c == 0 { 1.0 } else { s(i) }),
            Tensor::from_fn(n_boundary, 2, |i, c| if c == 0 { s(i) } else { 0.0 }),
            Tensor::from_fn(n_boundary, 2, |i, c| if c == 0 { s(i) } else { 1.0 }),
        ];
        Ok(Collocation { interior, edges })
    }

    fn edge_points(&self) -> Tensor {
        let mut data = Vec::new();
        for e in &self.edges {
            data.extend_from_slice(e.data());
        }
        let n = data.len() / 2;
        Tensor::matrix(n, 2, data).expect("edge points")
    }
}

/// Per-sample residual terms, each node `[S, ·]`.
#[derive(Clone, Copy, Debug)]
pub struct ResidualTerms {
    /// `[S, M·L]` weak residuals for all `L` loading cases.
    pub weak: Var,
    /// `[S, 1]` mean flux-consistency violation (zero node for the field task).
    pub consistency: Var,
    /// `[S, 1]` mean boundary-condition violation.
    pub bc: Var,
}

fn mean_cols(g: &mut Graph, v: Var) -> Var {
    let (_, c) = g.shape(v);
    let s = g.sum_axis(v, Axis::Cols);
    g.scale(s, 1.0 / c as f64)
}

fn sq_dev(g: &mut Graph, v: Var, target: f64) -> Var {
    let d = g.add_scalar(v, -target);
    g.square(d)
}

/// Residuals of a property-task field with channels
/// `(T, q_x, q_y)` for horizontal then vertical loading.
///
/// Divergence: `r_m = ∫ q·∇w`. Consistency: mean over interior points of
/// `|q − μ̂∇T|²`. Boundary: mean squared violation of `T` on the Dirichlet
/// edges and of the normal flux on the insulated edges.
pub fn flux_residuals(
    g: &mut Graph,
    micro: &[&Microstructure],
    field: &dyn FieldEvaluator,
    tests: &TestSet,
    colloc: &Collocation,
    h: f64,
) -> Result<ResidualTerms> {
    if field.channels() != Task::Property.channels() {
        return Err(Error::invalid(format!("flux residuals need 6 channels, field has {}", field.channels())));
    }
    let nodes = field.eval(g, &tests.points)?;
    let d_h = tests.integrate_grad(g, nodes[1], nodes[2])?;
    let d_v = tests.integrate_grad(g, nodes[4], nodes[5])?;
    let weak = g.concat_cols(&[d_h, d_v])?;

    let grads = spatial_gradients(g, field, &[0, 3], &colloc.interior, h)?;
    let vals = field.eval(g, &colloc.interior)?;
    let mu = g.constant(mu_at(micro, &colloc.interior));
    let mut cons_parts = Vec::with_capacity(4);
    for (l, &(tx, ty)) in grads.iter().enumerate() {
        for (q, t) in [(vals[3 * l + 1], tx), (vals[3 * l + 2], ty)] {
            let mt = g.mul(t, mu)?;
            let d = g.sub(q, mt)?;
            cons_parts.push(g.square(d));
        }
    }
    // |q − μ̂∇T|² summed over both components and loadings, averaged over points.
    let cons = g.concat_cols(&cons_parts)?;
    let cons = mean_cols(g, cons);
    let consistency = g.scale(cons, 4.0);

    let n_b = colloc.edges[0].rows();
    let ev = field.eval(g, &colloc.edge_points())?;
    let edge = |g: &mut Graph, ch: usize, e: usize| g.slice_cols(ev[ch], e * n_b, (e + 1) * n_b);
    let (left, right, bottom, top) = (0, 1, 2, 3);
    let mut bc_parts = Vec::with_capacity(8);
    // Horizontal loading: T = 0 left, T = 1 right, q_y = 0 bottom and top.
    let v = edge(g, 0, left)?;
    bc_parts.push(sq_dev(g, v, 0.0));
    let v = edge(g, 0, right)?;
    bc_parts.push(sq_dev(g, v, 1.0));
    for e in [bottom, top] {
        let v = edge(g, 2, e)?;
        bc_parts.push(sq_dev(g, v, 0.0));
    }
    // Vertical loading: T = 0 bottom, T = 1 top, q_x = 0 left and right.
    let v = edge(g, 3, bottom)?;
    bc_parts.push(sq_dev(g, v, 0.0));
    let v = edge(g, 3, top)?;
    bc_parts.push(sq_dev(g, v, 1.0));
    for e in [left, right] {
        let v = edge(g, 4, e)?;
        bc_parts.push(sq_dev(g, v, 0.0));
    }
    let bc = g.concat_cols(&bc_parts)?;
    let bc = mean_cols(g, bc);
    Ok(ResidualTerms { weak, consistency, bc })
}

/// Residuals of a field-task field (channel 0 is `T`): `r_m = ∫ μ̂∇T·∇w`
/// plus the Dirichlet penalty for `T = 1` on the right edge and `T = 0`
/// elsewhere.
pub fn field_residuals(
    g: &mut Graph,
    micro: &[&Microstructure],
    field: &dyn FieldEvaluator,
    tests: &TestSet,
    colloc: &Collocation,
    h: f64,
) -> Result<ResidualTerms> {
    let (tx, ty) = spatial_gradients(g, field, &[0], &tests.points, h)?[0];
    let mu = g.constant(tests.mu_at_nodes(micro));
    let fx = g.mul(tx, mu)?;
    let fy = g.mul(ty, mu)?;
    let weak = tests.integrate_grad(g, fx, fy)?;
    let n_b = colloc.edges[0].rows();
    let ev = field.eval(g, &colloc.edge_points())?;
    let mut parts = Vec::with_capacity(4);
    for (e, target) in [(0, 0.0), (1, 1.0), (2, 0.0), (3, 0.0)] {
        let v = g.slice_cols(ev[0], e * n_b, (e + 1) * n_b)?;
        parts.push(sq_dev(g, v, target));
    }
    let bc = g.concat_cols(&parts)?;
    let bc = mean_cols(g, bc);
    let s = g.shape(bc).0;
    let consistency = g.constant(Tensor::zeros(s, 1));
    Ok(ResidualTerms { weak, consistency, bc })
}
