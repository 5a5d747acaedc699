//! Latent-space inverse design: property boxes (P1), field recovery from
//! sensors (P2) and anisotropy maximization (P3), each scored by the oracle.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::microgen::Microstructure;
use crate::networks::{pixel_centers, Model};
use crate::oracle::{self, BcSpec};
use crate::seed::derive_seed;
use crate::task::Task;

pub const REPORT_VERSION: u32 = 1;
/// Evaluation grid for predicted κ (matches the label grid).
pub const EVAL_GRID: usize = 64;
/// Lower clamp on κ inside logarithms.
pub const KAPPA_FLOOR: f64 = 1e-6;

fn default_tau() -> f64 {
    10.0
}

fn default_alpha() -> f64 {
    10.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Utility {
    /// `F = κ_h / κ_v`.
    #[default]
    Anisotropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum DesignTarget {
    P1 {
        kappa_h: [f64; 2],
        kappa_v: [f64; 2],
        #[serde(default = "default_tau")]
        tau: f64,
    },
    P2 {
        sensors: Vec<[f64; 2]>,
        values: Vec<f64>,
        /// Defaults to `1 / ‖values‖²`.
        #[serde(default)]
        tau_u: Option<f64>,
        /// Ground-truth phases (`k × k`, row-major) for `I_corr`, when known.
        #[serde(default)]
        reference: Option<Vec<u8>>,
    },
    P3 {
        #[serde(default)]
        utility: Utility,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

/// Uniform `n × n` interior sensor grid at cell centers.
pub fn default_sensors(n: usize) -> Vec<[f64; 2]> {
    let nf = n as f64;
    (0..n * n).map(|p| [((p % n) as f64 + 0.5) / nf, ((p / n) as f64 + 0.5) / nf]).collect()
}

impl DesignTarget {
    pub fn task(&self) -> Task {
        match self {
            DesignTarget::P1 { .. } | DesignTarget::P3 { .. } => Task::Property,
            DesignTarget::P2 { .. } => Task::Field,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DesignTarget::P1 { .. } => "p1",
            DesignTarget::P2 { .. } => "p2",
            DesignTarget::P3 { .. } => "p3",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DesignTarget::P1 { kappa_h, kappa_v, tau } => {
                for [lo, hi] in [kappa_h, kappa_v] {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::invalid(format!("target box side [{lo}, {hi}] is empty")));
                    }
                }
                if !(*tau > 0.0) {
                    return Err(Error::invalid("tau must be positive"));
                }
            }
            DesignTarget::P2 {
                sensors,
                values,
                tau_u,
                reference,
            } => {
                if sensors.is_empty() || sensors.len() != values.len() {
                    return Err(Error::invalid(format!("need one value per sensor and at least one sensor, got {} and {}", sensors.len(), values.len())));
                }
                if sensors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::invalid("sensors must lie in the unit square"));
                }
                if values.iter().all(|&v| v == 0.0) && tau_u.is_none() {
                    return Err(Error::invalid("all-zero sensor values need an explicit tau_u"));
                }
                if tau_u.is_some_and(|t| !(t > 0.0)) {
                    return Err(Error::invalid("tau_u must be positive"));
                }
                if let Some(r) = reference {
                    let k = (r.len() as f64).sqrt().round() as usize;
                    Microstructure::new(k, r.clone())?;
                }
            }
            DesignTarget::P3 { alpha, .. } => {
                if !(*alpha > 0.0) {
                    return Err(Error::invalid("alpha must be positive"));
                }
            }
        }
        Ok(())
    }

    fn reference(&self) -> Result<Option<Microstructure>> {
        match self {
            DesignTarget::P2 { reference: Some(r), .. } => {
                let k = (r.len() as f64).sqrt().round() as usize;
                Ok(Some(Microstructure::new(k, r.clone())?))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignRun {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    /// Steps between learning-rate halvings.
    pub lr_period: usize,
    pub seed: u64,
    /// Oracle grid for evaluating decoded designs.
    pub oracle_grid: usize,
    pub eval_grid: usize,
}

impl Default for DesignRun {
    fn default() -> Self {
        DesignRun {
            restarts: 50,
            steps: 500,
            lr: 0.01,
            lr_period: 100,
            seed: 0,
            oracle_grid: 64,
            eval_grid: EVAL_GRID,
        }
    }
}

impl DesignRun {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.lr_period == 0 || self.oracle_grid == 0 || self.eval_grid == 0 {
            return Err(Error::invalid("restarts, lr period and grids must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("design learning rate must be positive"));
        }
        Ok(())
    }
}

/// A target file: the target fields plus optional run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub target: DesignTarget,
    #[serde(default)]
    pub run: DesignRun,
}

fn require_task(model: &Model, task: Task) -> Result<()> {
    if model.config.task != task {
        return Err(Error::invalid(format!("checkpoint was trained for the {} task, this needs {task}", model.config.task)));
    }
    Ok(())
}

/// `(κ_h, κ_v)`, each `[R, 1]`: absolute means of the decoded horizontal
/// `q_x` and vertical `q_y` over an `e × e` cell-centered grid.
pub fn predicted_kappa(g: &mut Graph, model: &Model, beta: Var, e: usize) -> Result<(Var, Var)> {
    require_task(model, Task::Property)?;
    let pts = g.constant(pixel_centers(e));
    let means = model.u_decoder.eval_mean(g, &model.store, beta, pts)?;
    Ok((g.abs(means[1]), g.abs(means[5])))
}

/// Predicted `(κ_h, κ_v)` rows for a batch of latents.
pub fn predicted_kappa_values(model: &Model, beta: &Tensor, e: usize) -> Result<Vec<[f64; 2]>> {
    let mut g = Graph::frozen();
    let b = g.constant(beta.clone());
    let (h, v) = predicted_kappa(&mut g, model, b, e)?;
    Ok(g.value(h).data().iter().zip(g.value(v).data()).map(|(&a, &b)| [a, b]).collect())
}

fn inside(k: [f64; 2], kappa_h: [f64; 2], kappa_v: [f64; 2]) -> bool {
    (kappa_h[0]..=kappa_h[1]).contains(&k[0]) && (kappa_v[0]..=kappa_v[1]).contains(&k[1])
}

/// Mollified box log-likelihood, `[R, 1]`: `0` inside the box, else
/// `−τ ‖κ − κ̄‖²` with `κ̄` the box center.
pub fn box_log_likelihood(g: &mut Graph, kh: Var, kv: Var, kappa_h: [f64; 2], kappa_v: [f64; 2], tau: f64) -> Result<Var> {
    let ch = 0.5 * (kappa_h[0] + kappa_h[1]);
    let cv = 0.5 * (kappa_v[0] + kappa_v[1]);
    let mask: Vec<f64> = g
        .value(kh)
        .data()
        .iter()
        .zip(g.value(kv).data())
        .map(|(&h, &v)| if inside([h, v], kappa_h, kappa_v) { 0.0 } else { -tau })
        .collect();
    let dh = g.add_scalar(kh, -ch);
    let dv = g.add_scalar(kv, -cv);
    let dh = g.square(dh);
    let dv = g.square(dv);
    let d2 = g.add(dh, dv)?;
    let m = g.constant(Tensor::column(mask));
    g.mul(d2, m)
}

/// Sensor log-likelihood `−τ_u Σ (u_d − T(β)(Ξ))²`, `[R, 1]`.
pub fn sensor_log_likelihood(g: &mut Graph, model: &Model, beta: Var, sensors: &[[f64; 2]], values: &[f64], tau_u: f64) -> Result<Var> {
    require_task(model, Task::Field)?;
    let pts = g.constant(Tensor::matrix(sensors.len(), 2, sensors.iter().flatten().copied().collect())?);
    let t = model.response(g, beta, pts)?[0];
    let u = g.constant(Tensor::row(values.to_vec()));
    let d = g.sub(t, u)?;
    let sq = g.square(d);
    let s = g.sum_axis(sq, crate::autodiff::Axis::Cols);
    Ok(g.scale(s, -tau_u))
}

/// Tempered utility `α log(κ_h / κ_v)` with both κ clamped at [`KAPPA_FLOOR`].
pub fn utility_log_likelihood(g: &mut Graph, kh: Var, kv: Var, alpha: f64) -> Result<Var> {
    let h = g.clamp(kh, KAPPA_FLOOR, f64::INFINITY);
    let v = g.clamp(kv, KAPPA_FLOOR, f64::INFINITY);
    let lh = g.log(h);
    let lv = g.log(v);
    let d = g.sub(lh, lv)?;
    Ok(g.scale(d, alpha))
}

fn tau_u_of(values: &[f64], tau_u: Option<f64>) -> f64 {
    tau_u.unwrap_or_else(|| 1.0 / values.iter().map(|v| v * v).sum::<f64>())
}

/// Log-likelihood part of the target's posterior, `[R, 1]`.
pub fn log_likelihood(g: &mut Graph, model: &Model, target: &DesignTarget, beta: Var, eval_grid: usize) -> Result<Var> {
    match target {
        DesignTarget::P1 { kappa_h, kappa_v, tau } => {
            let (kh, kv) = predicted_kappa(g, model, beta, eval_grid)?;
            box_log_likelihood(g, kh, kv, *kappa_h, *kappa_v, *tau)
        }
        DesignTarget::P2 { sensors, values, tau_u, .. } => sensor_log_likelihood(g, model, beta, sensors, values, tau_u_of(values, *tau_u)),
        DesignTarget::P3 { alpha, .. } => {
            let (kh, kv) = predicted_kappa(g, model, beta, eval_grid)?;
            utility_log_likelihood(g, kh, kv, *alpha)
        }
    }
}

/// `log p(β | target)` up to a constant: likelihood plus flow prior, `[R, 1]`.
pub fn log_posterior(g: &mut Graph, model: &Model, target: &DesignTarget, beta: Var, eval_grid: usize) -> Result<Var> {
    require_task(model, target.task())?;
    let ll = log_likelihood(g, model, target, beta, eval_grid)?;
    let lp = model.prior_log_density(g, beta)?;
    g.add(ll, lp)
}

/// Cross-correlation indicator of two fields after scaling each to `[0, 1]`:
/// `Σ a²b² / (√Σa² · √Σb²)`.
///
/// Fields already inside `[0, 1]` are used as is; others are min-max scaled.
/// A field that is zero after scaling gives `0` (the ratio is undefined).
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("fields must be non-empty and equal in size, got {} and {}", a.len(), b.len())));
    }
    let scale = |v: &[f64]| -> Vec<f64> {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        if lo >= 0.0 && hi <= 1.0 {
            v.to_vec()
        } else if hi > lo {
            v.iter().map(|&x| (x - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; v.len()]
        }
    };
    let (a, b) = (scale(a), scale(b));
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    if saa == 0.0 || sbb == 0.0 {
        log::warn!("cross-correlation of an all-zero field; returning 0");
        return Ok(0.0);
    }
    let num: f64 = a.iter().zip(&b).map(|(x, y)| x * x * y * y).sum();
    Ok(num / (saa.sqrt() * sbb.sqrt()))
}

/// One restart's outcome. Oracle fields are recomputed from `design`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub restart: usize,
    pub seed: u64,
    /// Objective became non-finite; excluded from aggregates.
    pub failed: bool,
    /// All-one or all-zero design.
    pub degenerate: bool,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub volume_fraction: f64,
    pub predicted_kappa: Option<[f64; 2]>,
    pub oracle_kappa: Option<[f64; 2]>,
    pub predicted_sensors: Option<Vec<f64>>,
    pub oracle_sensors: Option<Vec<f64>>,
    pub inside_box: Option<bool>,
    pub ratio: Option<f64>,
    pub i_corr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub evaluated: usize,
    pub failed: usize,
    pub degenerate: usize,
    pub success_rate: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub mean_i_corr: Option<f64>,
    pub best_i_corr: Option<f64>,
    /// Mean relative sensor error `‖T_oracle − u_d‖ / ‖u_d‖`.
    pub mean_sensor_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub format_version: u32,
    pub target: DesignTarget,
    pub run: DesignRun,
    pub records: Vec<DesignRecord>,
    pub summary: DesignSummary,
    #[serde(skip)]
    pub designs: Vec<Microstructure>,
    /// Objective before each step and after the last, per restart.
    #[serde(skip)]
    pub traces: Vec<Vec<f64>>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Oracle metrics for one decoded design.
fn oracle_metrics(target: &DesignTarget, m: &Microstructure, grid: usize, reference: Option<&Microstructure>, rec: &mut DesignRecord) -> Result<()> {
    match target {
        DesignTarget::P1 { kappa_h, kappa_v, .. } => {
            let k = oracle::effective_conductivity(m, grid)?;
            let kk = [k.kappa_h, k.kappa_v];
            rec.oracle_kappa = Some(kk);
            rec.inside_box = Some(inside(kk, *kappa_h, *kappa_v));
            rec.ratio = Some(k.kappa_h / k.kappa_v);
        }
        DesignTarget::P3 { .. } => {
            let k = oracle::effective_conductivity(m, grid)?;
            rec.oracle_kappa = Some([k.kappa_h, k.kappa_v]);
            rec.ratio = Some(k.kappa_h / k.kappa_v);
        }
        DesignTarget::P2 { sensors, .. } => {
            let s = oracle::solve(m, &BcSpec::field_recovery(), grid)?;
            rec.oracle_sensors = Some(oracle::sample_sensors(&s.t, grid, sensors)?);
            if let Some(r) = reference {
                if r.k() != m.k() {
                    return Err(Error::invalid(format!("reference has k = {}, designs have k = {}", r.k(), m.k())));
                }
                rec.i_corr = Some(cross_correlation(&r.as_f64(), &m.as_f64())?);
            }
        }
    }
    Ok(())
}

fn summarize(target: &DesignTarget, records: &[DesignRecord]) -> DesignSummary {
    let ok: Vec<&DesignRecord> = records.iter().filter(|r| !r.failed).collect();
    let mut s = DesignSummary {
        evaluated: ok.len(),
        failed: records.len() - ok.len(),
        degenerate: records.iter().filter(|r| r.degenerate).count(),
        ..Default::default()
    };
    s.success_rate = mean(ok.iter().filter_map(|r| r.inside_box).map(|b| f64::from(u8::from(b))));
    s.mean_ratio = mean(ok.iter().filter_map(|r| r.ratio));
    s.mean_i_corr = mean(ok.iter().filter_map(|r| r.i_corr));
    s.best_i_corr = ok.iter().filter_map(|r| r.i_corr).reduce(f64::max);
    if let DesignTarget::P2 { values, .. } = target {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        s.mean_sensor_error = mean(ok.iter().filter_map(|r| r.oracle_sensors.as_ref()).map(|o| {
            o.iter().zip(values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm
        }));
    }
    s
}

/// Recompute oracle metrics and aggregates for existing designs.
pub fn evaluate(target: &DesignTarget, designs: &[Microstructure], records: &mut [DesignRecord], grid: usize) -> Result<DesignSummary> {
    if designs.is_empty() {
        return Err(Error::invalid("no designs to evaluate"));
    }
    if designs.len() != records.len() {
        return Err(Error::invalid("design and record counts differ"));
    }
    target.validate()?;
    let reference = target.reference()?;
    records
        .par_iter_mut()
        .zip(designs.par_iter())
        .try_for_each(|(rec, m)| {
            let vf = m.volume_fraction();
            rec.volume_fraction = vf;
            rec.degenerate = vf == 0.0 || vf == 1.0;
            oracle_metrics(target, m, grid, reference.as_ref(), rec)
        })?;
    Ok(summarize(target, records))
}

/// Initial latents: row `r` is the flow image of `z ~ N(0, I)` drawn with
/// seed `derive_seed(seed, r)`.
pub fn initial_latents(model: &Model, restarts: usize, seed: u64) -> Result<(Tensor, Vec<u64>)> {
    let d = model.config.d_beta;
    let seeds: Vec<u64> = (0..restarts).map(|r| derive_seed(seed, r as u64)).collect();
    let mut z = Vec::with_capacity(restarts * d);
    for &s in &seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        z.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    }
    let z = Tensor::matrix(restarts, d, z)?;
    Ok((model.flow.inverse(&model.store, &z)?, seeds))
}

/// Objective values and gradients for every row of `beta`.
fn objective(model: &Model, target: &DesignTarget, beta: &Tensor, eval_grid: usize) -> Result<(Vec<f64>, Tensor)> {
    let mut g = Graph::frozen();
    let b = g.input(beta.clone());
    let lp = log_posterior(&mut g, model, target, b, eval_grid)?;
    let vals = g.value(lp).data().to_vec();
    // Rows are independent, so the gradient of the sum is the per-row gradient.
    let s = g.sum(lp);
    let grad = g
        .backward(s)
        .ok()
        .and_then(|mut gr| gr.take(b))
        .unwrap_or_else(|| Tensor::full(beta.rows(), beta.cols(), f64::NAN));
    Ok((vals, grad))
}

/// Gradient ascent on the log-posterior from `run.restarts` prior samples,
/// then thresholded decoding and oracle evaluation.
///
/// All restarts share one batched graph; Adam acts elementwise, so each row
/// follows the same path it would alone.
pub fn optimize(model: &Model, target: &DesignTarget, run: &DesignRun) -> Result<DesignReport> {
    target.validate()?;
    run.validate()?;
    require_task(model, target.task())?;
    if let Some(r) = target.reference()? {
        if r.k() != model.config.k {
            return Err(Error::invalid(format!("reference has k = {}, model has k = {}", r.k(), model.config.k)));
        }
    }
    let (mut beta, seeds) = initial_latents(model, run.restarts, run.seed)?;
    let (r, d) = beta.dims();
    let mut failed = vec![false; r];
    let mut traces = vec![Vec::with_capacity(run.steps + 1); r];
    let mut adam = AdamState::new(std::slice::from_ref(&beta));
    for step in 0..=run.steps {
        let (vals, grad) = objective(model, target, &beta, run.eval_grid)?;
        let mut ascent = Tensor::zeros(r, d);
        for i in 0..r {
            let gi = grad.row_slice(i);
            if failed[i] || !vals[i].is_finite() || gi.iter().any(|x| !x.is_finite()) {
                if !failed[i] {
                    log::warn!("restart {i} produced a non-finite objective at step {step}; excluded");
                }
                failed[i] = true;
                traces[i].push(f64::NAN);
                continue;
            }
            traces[i].push(vals[i]);
            for (j, &x) in gi.iter().enumerate() {
                ascent.set(i, j, -x);
            }
        }
        if step == run.steps {
            break;
        }
        let lr = run.lr * 0.5f64.powi((step / run.lr_period) as i32);
        adam.step(std::slice::from_mut(&mut beta), &[ascent], lr)?;
    }

    let designs = model.decode_microstructures(&beta)?;
    let predicted = match target.task() {
        Task::Property => Some(predicted_kappa_values(model, &beta, run.eval_grid)?),
        Task::Field => None,
    };
    let predicted_sensors = match target {
        DesignTarget::P2 { sensors, .. } => {
            let pts = Tensor::matrix(sensors.len(), 2, sensors.iter().flatten().copied().collect())?;
            Some(model.response_values(&beta, &pts)?.swap_remove(0))
        }
        _ => None,
    };
    let mut records: Vec<DesignRecord> = (0..r)
        .map(|i| DesignRecord {
            restart: i,
            seed: seeds[i],
            failed: failed[i],
            degenerate: false,
            beta: beta.row_slice(i).to_vec(),
            objective: *traces[i].last().expect("trace has the final value"),
            volume_fraction: 0.0,
            predicted_kappa: predicted.as_ref().map(|p| p[i]),
            oracle_kappa: None,
            predicted_sensors: predicted_sensors.as_ref().map(|p| p.row_slice(i).to_vec()),
            oracle_sensors: None,
            inside_box: None,
            ratio: None,
            i_corr: None,
        })
        .collect();
    let summary = evaluate(target, &designs, &mut records, run.oracle_grid)?;
    Ok(DesignReport {
        format_version: REPORT_VERSION,
        target: target.clone(),
        run: run.clone(),
        records,
        summary,
        designs,
        traces,
    })
}

impl DesignReport {
    /// Write `report.json`, `designs.u8` and `traces.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("report.json"))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        let bytes: Vec<u8> = self.designs.iter().flat_map(|m| m.phase().iter().copied()).collect();
        fs::write(dir.join("designs.u8"), bytes)?;
        let mut f = fs::File::create(dir.join("traces.csv"))?;
        writeln!(f, "restart,step,objective")?;
        for (i, t) in self.traces.iter().enumerate() {
            for (s, v) in t.iter().enumerate() {
                writeln!(f, "{i},{s},{v:e}")?;
            }
        }
        Ok(())
    }

    /// Read a report; designs come from `designs.u8`, traces are not reloaded.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path)?;
        let mut rep: DesignReport = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if rep.format_version != REPORT_VERSION {
            return Err(Error::format(&path, format!("unsupported format version {}", rep.format_version)));
        }
        let dpath = dir.join("designs.u8");
        let bytes = fs::read(&dpath)?;
        let n = rep.records.len();
        if n == 0 {
            if !bytes.is_empty() {
                return Err(Error::format(&dpath, "designs present but report has no records"));
            }
            return Ok(rep);
        }
        if bytes.len() % n != 0 {
            return Err(Error::format(&dpath, "size is not a multiple of the record count"));
        }
        let kk = bytes.len() / n;
        let k = (kk as f64).sqrt().round() as usize;
        if k * k != kk {
            return Err(Error::format(&dpath, "designs are not square"));
        }
        rep.designs = bytes
            .chunks_exact(kk)
            .map(|c| Microstructure::new(k, c.to_vec()))
            .collect::<Result<_>>()
            .map_err(|e| Error::format(&dpath, e.to_string()))?;
        Ok(rep)
    }
}
