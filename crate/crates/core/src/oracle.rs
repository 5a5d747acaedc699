//! Cell-centered finite-volume solver for `∇·(μ∇T) = 0` on the unit square.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microgen::Microstructure;
use crate::task::Task;

/// Relative residual the conjugate-gradient solve must reach.
pub const CG_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EdgeBc {
    Dirichlet(f64),
    /// Zero normal flux.
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcSpec {
    pub left: EdgeBc,
    pub right: EdgeBc,
    pub bottom: EdgeBc,
    pub top: EdgeBc,
}

impl BcSpec {
    /// `T = 0` left, `T = 1` right, insulated top and bottom.
    pub fn horizontal() -> Self {
        BcSpec {
            left: EdgeBc::Dirichlet(0.0),
            right: EdgeBc::Dirichlet(1.0),
            bottom: EdgeBc::Neumann,
            top: EdgeBc::Neumann,
        }
    }

    /// `T = 0` bottom, `T = 1` top, insulated left and right.
    pub fn vertical() -> Self {
        BcSpec {
            left: EdgeBc::Neumann,
            right: EdgeBc::Neumann,
            bottom: EdgeBc::Dirichlet(0.0),
            top: EdgeBc::Dirichlet(1.0),
        }
    }

    /// Field-recovery loading: `T = 1` on the right edge, `T = 0` elsewhere.
    pub fn field_recovery() -> Self {
        BcSpec {
            left: EdgeBc::Dirichlet(0.0),
            right: EdgeBc::Dirichlet(1.0),
            bottom: EdgeBc::Dirichlet(0.0),
            top: EdgeBc::Dirichlet(0.0),
        }
    }

    pub fn uniform_dirichlet(value: f64) -> Self {
        let d = EdgeBc::Dirichlet(value);
        BcSpec {
            left: d,
            right: d,
            bottom: d,
            top: d,
        }
    }

    pub fn edges(&self) -> [EdgeBc; 4] {
        [self.left, self.right, self.bottom, self.top]
    }

    pub fn validate(&self) -> Result<()> {
        let mut any = false;
        for e in self.edges() {
            if let EdgeBc::Dirichlet(v) = e {
                if !v.is_finite() {
                    return Err(Error::invalid("Dirichlet value must be finite"));
                }
                any = true;
            }
        }
        if !any {
            return Err(Error::invalid("at least one edge must carry a Dirichlet condition"));
        }
        Ok(())
    }

    /// Smallest and largest Dirichlet value.
    pub fn dirichlet_range(&self) -> (f64, f64) {
        self.edges().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| match e {
            EdgeBc::Dirichlet(v) => (lo.min(*v), hi.max(*v)),
            EdgeBc::Neumann => (lo, hi),
        })
    }
}

/// Cell-centered solution on a `g × g` grid, row `i` indexing `y`.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub g: usize,
    pub t: Vec<f64>,
    /// `μ ∂T/∂x` at cell centers (mean of the two x-faces).
    pub qx: Vec<f64>,
    /// `μ ∂T/∂y` at cell centers.
    pub qy: Vec<f64>,
    /// Net flux entering through the left edge, `∫ q_x dy` at `x = 0`.
    pub flux_left: f64,
    /// Net flux leaving through the right edge.
    pub flux_right: f64,
    pub flux_bottom: f64,
    pub flux_top: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveProperty {
    pub kappa_h: f64,
    pub kappa_v: f64,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Conductivities upsampled to `g × g` by nearest neighbour.
fn upsample(m: &Microstructure, g: usize) -> Result<Vec<f64>> {
    let k = m.k();
    if g == 0 || g % k != 0 {
        return Err(Error::invalid(format!("grid {g} is not a positive multiple of the microstructure extent {k}")));
    }
    let s = g / k;
    let mut out = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            out.push(m.conductivity(i / s, j / s));
        }
    }
    Ok(out)
}

/// Five-point operator `A T = b` with face conductances divided by `h²`
/// folded out (all faces have the same length, so `h` cancels).
struct Operator {
    g: usize,
    /// Conductance of the face east of each cell (0 at the right edge).
    ce: Vec<f64>,
    /// Conductance of the face north of each cell (0 at the top edge).
    cn: Vec<f64>,
    diag: Vec<f64>,
}

impl Operator {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.g;
        for i in 0..g {
            for j in 0..g {
                let p = i * g + j;
                let mut v = self.diag[p] * x[p];
                if j + 1 < g {
                    v -= self.ce[p] * x[p + 1];
                }
                if j > 0 {
                    v -= self.ce[p - 1] * x[p - 1];
                }
                if i + 1 < g {
                    v -= self.cn[p] * x[p + g];
                }
                if i > 0 {
                    v -= self.cn[p - g] * x[p - g];
                }
                y[p] = v;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient.
fn pcg(op: &Operator, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<(f64, usize)> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok((0.0, 0));
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let inv: Vec<f64> = op.diag.iter().map(|d| 1.0 / d).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if rel <= tol {
            return Ok((rel, it));
        }
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rel <= tol {
        return Ok((rel, max_iter));
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel,
    })
}

/// Solve `∇·(μ∇T) = 0` on a `g × g` cell-centered grid.
///
/// Interior faces use the harmonic mean of the adjacent conductivities; a
/// Dirichlet edge contributes a half-cell conductance `2κ`.
pub fn solve(m: &Microstructure, bc: &BcSpec, g: usize) -> Result<SolveResult> {
    bc.validate()?;
    let kappa = upsample(m, g)?;
    let n = g * g;
    let h = 1.0 / g as f64;
    let mut ce = vec![0.0; n];
    let mut cn = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..g {
        for j in 0..g {
            let p = i * g + j;
            if j + 1 < g {
                let c = harmonic(kappa[p], kappa[p + 1]);
                ce[p] = c;
                diag[p] += c;
                diag[p + 1] += c;
            }
            if i + 1 < g {
                let c = harmonic(kappa[p], kappa[p + g]);
                cn[p] = c;
                diag[p] += c;
                diag[p + g] += c;
            }
        }
    }
    let mut boundary = |p: usize, e: EdgeBc| {
        if let EdgeBc::Dirichlet(v) = e {
            let c = 2.0 * kappa[p];
            diag[p] += c;
            b[p] += c * v;
        }
    };
    for i in 0..g {
        boundary(i * g, bc.left);
        boundary(i * g + g - 1, bc.right);
    }
    for j in 0..g {
        boundary(j, bc.bottom);
        boundary((g - 1) * g + j, bc.top);
    }
    let op = Operator { g, ce, cn, diag };
    let (lo, hi) = bc.dirichlet_range();
    let mut t = vec![0.5 * (lo + hi); n];
    let (residual, iterations) = pcg(&op, &b, &mut t, CG_TOL, 20 * n + 100)?;

    // Face flux densities q_f = c_f ΔT / h on x-faces (g+1 per row) and
    // y-faces (g+1 per column).
    let edge_flux = |p: usize, e: EdgeBc, outward: f64| -> f64 {
        match e {
            // Flux along +axis: 2κ(T_b − T_c)/h on the high side, 2κ(T_c − T_b)/h on the low side.
            EdgeBc::Dirichlet(v) => outward * 2.0 * kappa[p] * (v - t[p]) / h,
            EdgeBc::Neumann => 0.0,
        }
    };
    let mut fx = vec![0.0; g * (g + 1)];
    let mut fy = vec![0.0; (g + 1) * g];
    for i in 0..g {
        fx[i * (g + 1)] = edge_flux(i * g, bc.left, -1.0);
        fx[i * (g + 1) + g] = edge_flux(i * g + g - 1, bc.right, 1.0);
        for j in 0..g - 1 {
            let p = i * g + j;
            fx[i * (g + 1) + j + 1] = op.ce[p] * (t[p + 1] - t[p]) / h;
        }
    }
    for j in 0..g {
        fy[j] = edge_flux(j, bc.bottom, -1.0);
        fy[g * g + j] = edge_flux((g - 1) * g + j, bc.top, 1.0);
        for i in 0..g - 1 {
            let p = i * g + j;
            fy[(i + 1) * g + j] = op.cn[p] * (t[p + g] - t[p]) / h;
        }
    }
    let mut qx = vec![0.0; n];
    let mut qy = vec![0.0; n];
    for i in 0..g {
        for j in 0..g {
            qx[i * g + j] = 0.5 * (fx[i * (g + 1) + j] + fx[i * (g + 1) + j + 1]);
            qy[i * g + j] = 0.5 * (fy[i * g + j] + fy[(i + 1) * g + j]);
        }
    }
    let flux_left = (0..g).map(|i| fx[i * (g + 1)]).sum::<f64>() * h;
    let flux_right = (0..g).map(|i| fx[i * (g + 1) + g]).sum::<f64>() * h;
    let flux_bottom = (0..g).map(|j| fy[j]).sum::<f64>() * h;
    let flux_top = (0..g).map(|j| fy[g * g + j]).sum::<f64>() * h;
    Ok(SolveResult {
        g,
        t,
        qx,
        qy,
        flux_left,
        flux_right,
        flux_bottom,
        flux_top,
        residual,
        iterations,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `κ_h = |mean q_x|` under horizontal loading and `κ_v = |mean q_y|`
/// under vertical loading.
pub fn effective_conductivity(m: &Microstructure, g: usize) -> Result<EffectiveProperty> {
    let h = solve(m, &BcSpec::horizontal(), g)?;
    let v = solve(m, &BcSpec::vertical(), g)?;
    Ok(EffectiveProperty {
        kappa_h: mean(&h.qx).abs(),
        kappa_v: mean(&v.qy).abs(),
    })
}

/// Harmonic and arithmetic means of the phase conductivities at volume
/// fraction `vf` of phase 1.
pub fn wiener_bounds(vf: f64) -> (f64, f64) {
    use crate::microgen::{KAPPA1, KAPPA2};
    let lower = 1.0 / (vf / KAPPA1 + (1.0 - vf) / KAPPA2);
    let upper = vf * KAPPA1 + (1.0 - vf) * KAPPA2;
    (lower, upper)
}

/// Labels for one sample: `channels × g × g` values plus `(κ_h, κ_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLabels {
    pub fields: Vec<f64>,
    pub kappa: EffectiveProperty,
}

/// Oracle labels for `task` on a `g × g` grid.
pub fn label_sample(m: &Microstructure, g: usize, task: Task) -> Result<SampleLabels> {
    match task {
        Task::Property => {
            let h = solve(m, &BcSpec::horizontal(), g)?;
            let v = solve(m, &BcSpec::vertical(), g)?;
            let kappa = EffectiveProperty {
                kappa_h: mean(&h.qx).abs(),
                kappa_v: mean(&v.qy).abs(),
            };
            let mut fields = Vec::with_capacity(6 * g * g);
            for s in [&h, &v] {
                fields.extend_from_slice(&s.t);
                fields.extend_from_slice(&s.qx);
                fields.extend_from_slice(&s.qy);
            }
            Ok(SampleLabels { fields, kappa })
        }
        Task::Field => {
            let s = solve(m, &BcSpec::field_recovery(), g)?;
            Ok(SampleLabels {
                fields: s.t,
                kappa: effective_conductivity(m, g)?,
            })
        }
    }
}

/// Label every sample in parallel; order follows `micro`.
pub fn label_dataset(micro: &[Microstructure], g: usize, task: Task) -> Result<Vec<SampleLabels>> {
    micro.par_iter().map(|m| label_sample(m, g, task)).collect()
}

/// Bilinear interpolation of a cell-centered `g × g` field at `points`.
///
/// Points between the outermost cell centers and the boundary take the
/// nearest edge values (constant extension).
pub fn sample_sensors(field: &[f64], g: usize, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    if field.len() != g * g || g == 0 {
        return Err(Error::invalid(format!("field has {} values, expected {}", field.len(), g * g)));
    }
    points
        .iter()
        .map(|&[x, y]| {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::invalid(format!("sensor ({x}, {y}) lies outside the unit square")));
            }
            Ok(bilinear(field, g, x, y))
        })
        .collect()
}

pub(crate) fn bilinear(field: &[f64], g: usize, x: f64, y: f64) -> f64 {
    let gf = g as f64;
    let u = (x * gf - 0.5).clamp(0.0, gf - 1.0);
    let v = (y * gf - 0.5).clamp(0.0, gf - 1.0);
    let j0 = (u.floor() as usize).min(g.saturating_sub(2));
    let i0 = (v.floor() as usize).min(g.saturating_sub(2));
    if g == 1 {
        return field[0];
    }
    let a = u - j0 as f64;
    let b = v - i0 as f64;
    let f = |i: usize, j: usize| field[i * g + j];
    (1.0 - b) * ((1.0 - a) * f(i0, j0) + a * f(i0, j0 + 1)) + b * ((1.0 - a) * f(i0 + 1, j0) + a * f(i0 + 1, j0 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slabs(k: usize) -> Microstructure {
        let phase = (0..k * k).map(|p| u8::from(p % k < k / 2)).collect();
        Microstructure::new(k, phase).unwrap()
    }

    #[test]
    fn homogeneous_linear_profile() {
        let m = Microstructure::uniform(8, 1).unwrap();
        let s = solve(&m, &BcSpec::horizontal(), 32).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let x = (j as f64 + 0.5) / 32.0;
                assert!((s.t[i * 32 + j] - x).abs() < 1e-9);
            }
        }
        let e = effective_conductivity(&m, 32).unwrap();
        assert!((e.kappa_h - 10.0).abs() < 1e-8 && (e.kappa_v - 10.0).abs() < 1e-8);
        assert!(s.qx.iter().all(|q| (q - 10.0).abs() < 1e-7));
    }

    #[test]
    fn constant_dirichlet_gives_constant_solution() {
        let m = slabs(8);
        let s = solve(&m, &BcSpec::uniform_dirichlet(0.7), 16).unwrap();
        assert!(s.t.iter().all(|t| (t - 0.7).abs() < 1e-9));
    }

    #[test]
    fn slabs_match_series_closed_form() {
        // κ=10 on x<½, κ=2 on x>½: q = 1 / (½/10 + ½/2) = 10/3, T(½) = q·½/10 = 1/6.
        let m = slabs(8);
        let s = solve(&m, &BcSpec::horizontal(), 64).unwrap();
        let q = 10.0 / 3.0;
        for j in 0..64 {
            let x = (j as f64 + 0.5) / 64.0;
            let want = if x < 0.5 { q * x / 10.0 } else { 1.0 / 6.0 + q * (x - 0.5) / 2.0 };
            assert!((s.t[5 * 64 + j] - want).abs() < 1e-6, "x={x}");
        }
        let e = effective_conductivity(&m, 64).unwrap();
        assert!((e.kappa_h - 10.0 / 3.0).abs() / (10.0 / 3.0) < 5e-3);
        assert!((e.kappa_v - 6.0).abs() / 6.0 < 5e-3);
    }

    #[test]
    fn flux_balance_and_maximum_principle() {
        let f = crate::microgen::sample_grf(&crate::microgen::GrfSpec::new(3.0, 16, 4)).unwrap();
        let m = crate::microgen::threshold_to_vf(&f, 16, 1.0 / 3.0).unwrap();
        let s = solve(&m, &BcSpec::horizontal(), 32).unwrap();
        assert!((s.flux_left - s.flux_right).abs() < 1e-8);
        assert!(s.t.iter().all(|&t| (0.0..=1.0).contains(&t)));
        let s = solve(&m, &BcSpec::field_recovery(), 32).unwrap();
        assert!(s.t.iter().all(|&t| (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let m = slabs(8);
        let all_neumann = BcSpec {
            left: EdgeBc::Neumann,
            right: EdgeBc::Neumann,
            bottom: EdgeBc::Neumann,
            top: EdgeBc::Neumann,
        };
        assert!(solve(&m, &all_neumann, 16).is_err());
        assert!(solve(&m, &BcSpec::horizontal(), 12).is_err());
    }

    #[test]
    fn bilinear_is_exact_for_affine_fields() {
        let g = 16;
        let field: Vec<f64> = (0..g * g).map(|p| ((p % g) as f64 + 0.5) / g as f64).collect();
        let v = sample_sensors(&field, g, &[[0.25, 0.5], [0.8, 0.13]]).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-12);
        assert!((v[1] - 0.8).abs() < 1e-12);
        let c = sample_sensors(&field, g, &[[3.5 / 16.0, 7.5 / 16.0]]).unwrap();
        assert_eq!(c[0], field[7 * g + 3]);
        assert!(sample_sensors(&field, g, &[[1.2, 0.5]]).is_err());
    }
}
