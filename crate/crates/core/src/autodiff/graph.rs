//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly: each node stores its value,
//! and nodes are appended in evaluation order, so the node list is already a
//! topological order. [`Graph::backward`] walks it in reverse.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, keeping a `[1, cols]` result.
    Rows,
    /// Reduce over columns, keeping a `[rows, 1]` result.
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Sum(usize),
    Mean(usize),
    SumAxis(usize),
    Square(usize),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Tanh(usize),
    Sigmoid(usize),
    Silu(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Broadcast(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul { .. } => "matmul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Square(..) => "square",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sin(..) => "sin",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Silu(..) => "silu",
            Op::Abs(..) => "abs",
            Op::Clamp(..) => "clamp",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Broadcast(..) => "broadcast",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    frozen: bool,
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn zip_broadcast(a: &Tensor, b: &Tensor, out: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.dims() == b.dims() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::matrix(out.0, out.1, data).expect("shape");
    }
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    let mut data = Vec::with_capacity(out.0 * out.1);
    for i in 0..out.0 {
        let ai = if ar == 1 { 0 } else { i };
        let bi = if br == 1 { 0 } else { i };
        for j in 0..out.1 {
            let x = a.data()[ai * ac + if ac == 1 { 0 } else { j }];
            let y = b.data()[bi * bc + if bc == 1 { 0 } else { j }];
            data.push(f(x, y));
        }
    }
    Tensor::matrix(out.0, out.1, data).expect("shape")
}

/// Sum `g` down to `target` dims (undoing a broadcast).
fn reduce_to(g: Tensor, target: (usize, usize)) -> Tensor {
    let (r, c) = g.dims();
    if (r, c) == target {
        return g;
    }
    let mut out = Tensor::zeros(target.0, target.1);
    for i in 0..r {
        let oi = if target.0 == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if target.1 == 1 { 0 } else { j };
            let v = g.data()[i * c + j];
            out.data_mut()[oi * target.1 + oj] += v;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameter leaves are constants (no parameter gradients).
    pub fn frozen() -> Self {
        Graph {
            frozen: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// A differentiable leaf (e.g. a latent vector being optimized).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf for parameter `id` of `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Op::Leaf, store.get(id).clone(), !self.frozen);
        self.params.insert(id, v);
        v
    }

    /// Parameter leaves created so far, as `(param id, node)`.
    pub fn param_vars(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = broadcast_dims(av.dims(), bv.dims()).ok_or_else(|| Error::Shape {
            op: name,
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })?;
        Ok((zip_broadcast(av, bv, out, f), self.rg(a.0) || self.rg(b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a.0, b.0), v, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a.0, b.0), v, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a.0, b.0), v, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x * s);
        let rg = self.rg(a.0);
        self.push(Op::Scale(a.0, s), v, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x + s);
        let rg = self.rg(a.0);
        self.push(Op::AddScalar(a.0), v, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let v = gemm(&self.nodes[a.0].value, ta, &self.nodes[b.0].value, tb)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Op::MatMul { a: a.0, b: b.0, ta, tb }, v, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg(a.0);
        self.push(Op::Sum(a.0), v, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a.0);
        self.push(Op::Mean(a.0), v, rg)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims();
        let v = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, x) in out.iter_mut().zip(t.row_slice(i)) {
                        *o += x;
                    }
                }
                Tensor::row(out)
            }
            Axis::Cols => Tensor::column((0..r).map(|i| pairwise_sum(t.row_slice(i))).collect()),
        };
        let rg = self.rg(a.0);
        self.push(Op::SumAxis(a.0), v, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.nodes[a.0].value.map(f);
        let rg = self.rg(a.0);
        self.push(op, v, rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a.0), |x| x * x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a.0), f64::sin)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a.0), |x| x * sigmoid(x))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a.0), f64::abs)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims();
        if start > end || end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let v = Tensor::matrix(r, w, data)?;
        let rg = self.rg(a.0);
        Ok(self.push(Op::SliceCols(a.0, start), v, rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if start > end || end > t.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let v = t.select_rows(start, end);
        let rg = self.rg(a.0);
        Ok(self.push(Op::SliceRows(a.0, start), v, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.shape(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: vec![r],
                    rhs: vec![pr],
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let v = Tensor::matrix(r, total, data)?;
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), v, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.cols() != c {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: vec![c],
                    rhs: vec![t.cols()],
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows, c, data)?;
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(Op::ConcatRows(parts.iter().map(|p| p.0).collect()), v, rg))
    }

    /// Expand a `[1, c]`, `[r, 1]` or `[1, 1]` node to `[rows, cols]`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        match broadcast_dims(t.dims(), (rows, cols)) {
            Some(d) if d == (rows, cols) => {}
            _ => {
                return Err(Error::Shape {
                    op: "broadcast",
                    lhs: t.shape().to_vec(),
                    rhs: vec![rows, cols],
                })
            }
        }
        let v = zip_broadcast(t, &Tensor::zeros(rows, cols), (rows, cols), |x, _| x);
        let rg = self.rg(a.0);
        Ok(self.push(Op::Broadcast(a.0), v, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient at node {idx} ({})", node.op.name())));
            }
            let y = &node.value;
            let val = |i: usize| &self.nodes[i].value;
            let acc = |i: usize, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => {
                        for (e, x) in existing.data_mut().iter_mut().zip(t.data()) {
                            *e += x;
                        }
                    }
                    slot => *slot = Some(t),
                }
            };
            let elementwise = |g: &Tensor, x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
                let data = g.data().iter().zip(x.data()).map(|(&gi, &xi)| f(gi, xi)).collect();
                Tensor::matrix(g.rows(), g.cols(), data).expect("shape")
            };

            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                &Op::Add(a, b) => {
                    acc(a, reduce_to(g.clone(), val(a).dims()), &mut grads);
                    acc(b, reduce_to(g, val(b).dims()), &mut grads);
                }
                &Op::Sub(a, b) => {
                    acc(a, reduce_to(g.clone(), val(a).dims()), &mut grads);
                    acc(b, reduce_to(g.map(|x| -x), val(b).dims()), &mut grads);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let out = g.dims();
                    if self.nodes[a].requires_grad {
                        let ga = zip_broadcast(&g, bv, out, |x, y| x * y);
                        acc(a, reduce_to(ga, av.dims()), &mut grads);
                    }
                    if self.nodes[b].requires_grad {
                        let gb = zip_broadcast(&g, av, out, |x, y| x * y);
                        acc(b, reduce_to(gb, bv.dims()), &mut grads);
                    }
                }
                &Op::Scale(a, s) => acc(a, g.map(|x| x * s), &mut grads),
                &Op::AddScalar(a) => acc(a, g, &mut grads),
                &Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (val(a), val(b));
                    if self.nodes[a].requires_grad {
                        let ga = if ta { gemm(bv, tb, &g, true)? } else { gemm(&g, false, bv, !tb)? };
                        acc(a, ga, &mut grads);
                    }
                    if self.nodes[b].requires_grad {
                        let gb = if tb { gemm(&g, true, av, ta)? } else { gemm(av, !ta, &g, false)? };
                        acc(b, gb, &mut grads);
                    }
                }
                &Op::Sum(a) => {
                    let (r, c) = val(a).dims();
                    acc(a, Tensor::full(r, c, g.item()), &mut grads);
                }
                &Op::Mean(a) => {
                    let (r, c) = val(a).dims();
                    acc(a, Tensor::full(r, c, g.item() / (r * c) as f64), &mut grads);
                }
                &Op::SumAxis(a) => {
                    let d = val(a).dims();
                    acc(a, zip_broadcast(&g, &Tensor::zeros(d.0, d.1), d, |x, _| x), &mut grads);
                }
                &Op::Square(a) => acc(a, elementwise(&g, val(a), &|gi, x| 2.0 * x * gi), &mut grads),
                &Op::Exp(a) => acc(a, elementwise(&g, y, &|gi, yi| gi * yi), &mut grads),
                &Op::Log(a) => acc(a, elementwise(&g, val(a), &|gi, x| gi / x), &mut grads),
                &Op::Sin(a) => acc(a, elementwise(&g, val(a), &|gi, x| gi * x.cos()), &mut grads),
                &Op::Tanh(a) => acc(a, elementwise(&g, y, &|gi, yi| gi * (1.0 - yi * yi)), &mut grads),
                &Op::Sigmoid(a) => acc(a, elementwise(&g, y, &|gi, yi| gi * yi * (1.0 - yi)), &mut grads),
                &Op::Silu(a) => acc(
                    a,
                    elementwise(&g, val(a), &|gi, x| {
                        let s = sigmoid(x);
                        gi * s * (1.0 + x * (1.0 - s))
                    }),
                    &mut grads,
                ),
                &Op::Abs(a) => acc(a, elementwise(&g, val(a), &|gi, x| if x < 0.0 { -gi } else { gi }), &mut grads),
                &Op::Clamp(a, lo, hi) => acc(
                    a,
                    elementwise(&g, val(a), &|gi, x| if x < lo || x > hi { 0.0 } else { gi }),
                    &mut grads,
                ),
                &Op::SliceCols(a, start) => {
                    let (r, c) = val(a).dims();
                    let w = g.cols();
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        ga.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                    }
                    acc(a, ga, &mut grads);
                }
                &Op::SliceRows(a, start) => {
                    let (r, c) = val(a).dims();
                    let mut ga = Tensor::zeros(r, c);
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(a, ga, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    let r = g.rows();
                    for &p in parts {
                        let w = val(p).cols();
                        let mut gp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            gp.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                        }
                        offset += w;
                        acc(p, Tensor::matrix(r, w, gp)?, &mut grads);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = val(p).dims();
                        let gp = g.data()[offset..offset + r * c].to_vec();
                        offset += r * c;
                        acc(p, Tensor::matrix(r, c, gp)?, &mut grads);
                    }
                }
                &Op::Broadcast(a) => acc(a, reduce_to(g, val(a).dims()), &mut grads),
            }
        }
        Ok(Grads { grads })
    }

    /// Gradient of `loss` with respect to every parameter in `store`.
    ///
    /// Parameters that never entered the graph receive zeros.
    pub fn param_grads(&self, loss: Var, store: &ParamStore) -> Result<Vec<Tensor>> {
        let mut grads = self.backward(loss)?;
        let mut out: Vec<Tensor> = (0..store.len())
            .map(|id| {
                let (r, c) = store.get(id).dims();
                Tensor::zeros(r, c)
            })
            .collect();
        for (id, v) in self.param_vars() {
            if let Some(g) = grads.take(v) {
                out[id] = g;
            }
        }
        Ok(out)
    }
}

/// Pairwise sum: error grows as O(log n), and `n` equal terms sum exactly
/// when `n` is a power of two.
fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => return 0.0,
        1 => return x[0],
        _ => {}
    }
    let (a, b) = x.split_at(x.len().next_power_of_two() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}
