//! ELBO over the reconstruction, prior, labeled-data and virtual-observable
//! terms, and the mini-batch training loop.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Axis, Graph, Tensor, Var, H_SPATIAL};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::microgen::Microstructure;
use crate::oracle;
use crate::networks::{micro_batch, pixel_centers, Model, ModelConfig, OperatorField};
use crate::residuals::{field_residuals, flux_residuals, make_test_functions, Collocation, ResidualConfig, ResidualTerms, TestSet};
use crate::seed::derive_seed;
use crate::symmetry::Symmetry;
use crate::task::Task;

/// Probabilities are clamped to `[P_CLAMP, 1 − P_CLAMP]` before the logs.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    pub lr_period: usize,
    pub lambda_pde: f64,
    pub lambda_data: f64,
    pub lambda_kl: f64,
    pub task: Task,
    pub use_labeled: bool,
    pub use_virtual: bool,
    pub seed: u64,
    pub residual: ResidualConfig,
    /// Label-grid points drawn per batch for the data term; `None` uses all.
    pub data_points: Option<usize>,
    pub h_spatial: f64,
    /// Epochs between snapshots; `0` disables them.
    pub snapshot_every: usize,
    /// Train each sample under a random symmetry of its loading.
    #[serde(default)]
    pub augment: bool,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 25,
            lr: 5e-4,
            lr_period: 200,
            lambda_pde: 0.25,
            lambda_data: 0.5,
            lambda_kl: 2.0,
            task,
            use_labeled: true,
            use_virtual: true,
            seed: 0,
            residual: ResidualConfig::default(),
            data_points: None,
            h_spatial: H_SPATIAL,
            snapshot_every: 100,
            augment: true,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::invalid(format!("batch size {} must lie in 1..={n}", self.batch_size)));
        }
        if !(self.lr > 0.0) || self.lr_period == 0 {
            return Err(Error::invalid("learning rate and its halving period must be positive"));
        }
        for (name, v) in [("lambda_pde", self.lambda_pde), ("lambda_data", self.lambda_data), ("lambda_kl", self.lambda_kl)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a finite non-negative weight, got {v}")));
            }
        }
        if self.data_points == Some(0) {
            return Err(Error::invalid("data_points must be positive"));
        }
        self.residual.validate()
    }
}

/// Step size in effect during `epoch` (0-based).
pub fn learning_rate(initial: f64, period: usize, epoch: usize) -> f64 {
    initial * 0.5f64.powi((epoch / period.max(1)) as i32)
}

/// Per-batch means of the ELBO components. `data` and `pde` carry their
/// λ weights; `kl` does not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub rec: f64,
    pub kl: f64,
    pub data: f64,
    pub pde: f64,
    pub total: f64,
}

/// `Σ_j [z log p + (1 − z) log(1 − p)]` per row, `[B, 1]`.
pub fn loss_rec(g: &mut Graph, z: Var, p: Var) -> Result<Var> {
    if g.shape(z) != g.shape(p) {
        let (a, b) = (g.shape(z), g.shape(p));
        return Err(Error::Shape {
            op: "loss_rec",
            lhs: vec![a.0, a.1],
            rhs: vec![b.0, b.1],
        });
    }
    let p = g.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    let lp = g.log(p);
    let np = g.neg(p);
    let q = g.add_scalar(np, 1.0);
    let lq = g.log(q);
    let nz = g.neg(z);
    let zc = g.add_scalar(nz, 1.0);
    let a = g.mul(z, lp)?;
    let b = g.mul(zc, lq)?;
    let s = g.add(a, b)?;
    Ok(g.sum_axis(s, Axis::Cols))
}

/// `−½‖f(β)‖² + log|det ∂f/∂β|` per row, `[B, 1]`.
pub fn loss_kl(g: &mut Graph, model: &Model, beta: Var) -> Result<Var> {
    let v = model.flow.log_density_unnormalized(g, &model.store, beta)?;
    if !g.value(v).is_finite() {
        return Err(Error::NonFinite("flow log-density".into()));
    }
    Ok(v)
}

/// `−(λ/2) Σ (labels − pred)²` per row, `[B, 1]`.
pub fn loss_data(g: &mut Graph, labels: &Tensor, pred: Var, lambda: f64) -> Result<Var> {
    let (r, c) = g.shape(pred);
    if labels.dims() != (r, c) {
        return Err(Error::Shape {
            op: "loss_data",
            lhs: labels.shape().to_vec(),
            rhs: vec![r, c],
        });
    }
    let l = g.constant(labels.clone());
    let d = g.sub(l, pred)?;
    let sq = g.square(d);
    let s = g.sum_axis(sq, Axis::Cols);
    Ok(g.scale(s, -0.5 * lambda))
}

/// `−(λ/2) (Σ_m r_m² + consistency + bc)` per row, `[B, 1]`.
pub fn loss_pde(g: &mut Graph, terms: &ResidualTerms, lambda: f64) -> Result<Var> {
    let sq = g.square(terms.weak);
    let s = g.sum_axis(sq, Axis::Cols);
    let s = g.add(s, terms.consistency)?;
    let s = g.add(s, terms.bc)?;
    Ok(g.scale(s, -0.5 * lambda))
}

/// Randomness shared by every sample of one batch.
#[derive(Clone, Debug)]
pub struct BatchContext {
    pub tests: TestSet,
    pub colloc: Collocation,
    /// Label-grid cell indices used by the data term.
    pub data_idx: Vec<usize>,
    /// Symmetry applied to batch row `r`; identity past the end.
    pub symmetries: Vec<Symmetry>,
}

impl BatchContext {
    /// Deterministic in `(cfg.seed, epoch, batch)`.
    pub fn new(cfg: &TrainConfig, grid: Option<usize>, epoch: usize, batch: usize) -> Result<Self> {
        let stream = derive_seed(derive_seed(cfg.seed, epoch as u64), batch as u64);
        let rcfg = ResidualConfig {
            seed: derive_seed(cfg.seed, 2),
            ..cfg.residual.clone()
        };
        let tests = TestSet::new(make_test_functions(&rcfg, epoch as u64, batch as u64)?, rcfg.n_q)?;
        let colloc = Collocation::new(rcfg.n_interior, rcfg.n_boundary, derive_seed(stream, 0))?;
        let data_idx = match grid {
            Some(gr) => {
                let all = gr * gr;
                let mut idx: Vec<usize> = (0..all).collect();
                if let Some(p) = cfg.data_points.filter(|&p| p < all) {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, 1));
                    idx.partial_shuffle(&mut rng, p);
                    idx.truncate(p);
                    idx.sort_unstable();
                }
                idx
            }
            None => Vec::new(),
        };
        let symmetries = if cfg.augment {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, 2));
            (0..cfg.batch_size).map(|_| Symmetry::sample(cfg.task, &mut rng)).collect()
        } else {
            Vec::new()
        };
        Ok(BatchContext {
            tests,
            colloc,
            data_idx,
            symmetries,
        })
    }

    fn symmetry(&self, row: usize) -> Symmetry {
        self.symmetries.get(row).copied().unwrap_or(Symmetry::IDENTITY)
    }
}

/// Per-sample ELBO terms, each `[B, 1]`; `data`/`pde` are `None` when disabled.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub rec: Var,
    pub kl: Var,
    pub data: Option<Var>,
    pub pde: Option<Var>,
    /// `[B, 1]` per-sample total.
    pub total: Var,
    /// Scalar batch mean of `total`.
    pub mean: Var,
}

impl ElboTerms {
    pub fn summary(&self, g: &Graph) -> BatchLoss {
        let mean = |v: Var| {
            let t = g.value(v);
            t.sum() / t.len() as f64
        };
        BatchLoss {
            rec: mean(self.rec),
            kl: mean(self.kl),
            data: self.data.map_or(0.0, mean),
            pde: self.pde.map_or(0.0, mean),
            total: g.value(self.mean).item(),
        }
    }
}

/// Coordinates of label-grid cells `idx` (row-major, row = y) as `[P, 2]`.
pub fn grid_points(grid: usize, idx: &[usize]) -> Tensor {
    let all = pixel_centers(grid);
    all.gather_rows(idx)
}

/// ELBO of the samples `indices` of `data` under `model`.
pub fn elbo(g: &mut Graph, model: &Model, data: &Dataset, indices: &[usize], cfg: &TrainConfig, ctx: &BatchContext) -> Result<ElboTerms> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if model.config.task != cfg.task {
        return Err(Error::invalid(format!("model is for the {} task, config asks for {}", model.config.task, cfg.task)));
    }
    let owned: Vec<Microstructure> = indices
        .iter()
        .enumerate()
        .map(|(r, &i)| ctx.symmetry(r).apply_micro(&data.micro[i]))
        .collect::<Result<_>>()?;
    let micro: Vec<&Microstructure> = owned.iter().collect();
    let x = g.constant(micro_batch(&micro)?);
    let beta = model.encode(g, x)?;

    let pix = g.constant(pixel_centers(model.config.k));
    let p = model.mu_probabilities(g, beta, pix)?;
    let rec = loss_rec(g, x, p)?;
    let kl = loss_kl(g, model, beta)?;
    let mut total = g.scale(kl, cfg.lambda_kl);
    total = g.add(total, rec)?;

    let data_term = if cfg.use_labeled {
        let grid = data.grid().ok_or_else(|| Error::invalid("labeled training needs a labeled dataset"))?;
        let fields = data.task_fields(cfg.task)?;
        let ch = cfg.task.channels();
        let per = ch * grid * grid;
        let pts = g.constant(grid_points(grid, &ctx.data_idx));
        let pred = model.response(g, beta, pts)?;
        let pred = g.concat_cols(&pred)?;
        let np = ctx.data_idx.len();
        let rows: Vec<Vec<f64>> = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| ctx.symmetry(r).apply_labels(cfg.task, grid, &fields[i * per..(i + 1) * per]))
            .collect();
        let labels = Tensor::from_fn(indices.len(), ch * np, |r, c| {
            let (chan, j) = (c / np, c % np);
            rows[r][chan * grid * grid + ctx.data_idx[j]]
        });
        // Subsampled sums are rescaled to estimate the full-grid sum.
        let weight = cfg.lambda_data * (grid * grid) as f64 / np as f64;
        let d = loss_data(g, &labels, pred, weight)?;
        total = g.add(total, d)?;
        Some(d)
    } else {
        None
    };

    let pde = if cfg.use_virtual {
        let field = OperatorField {
            net: &model.u_decoder,
            store: &model.store,
            beta,
        };
        let terms = match cfg.task {
            Task::Property => flux_residuals(g, &micro, &field, &ctx.tests, &ctx.colloc, cfg.h_spatial)?,
            Task::Field => field_residuals(g, &micro, &field, &ctx.tests, &ctx.colloc, cfg.h_spatial)?,
        };
        let v = loss_pde(g, &terms, cfg.lambda_pde)?;
        total = g.add(total, v)?;
        Some(v)
    } else {
        None
    };

    let s = g.sum(total);
    let mean = g.scale(s, 1.0 / indices.len() as f64);
    Ok(ElboTerms {
        rec,
        kl,
        data: data_term,
        pde,
        total,
        mean,
    })
}

/// The first non-finite per-sample term, as `(batch row, term name)`.
fn first_non_finite(g: &Graph, t: &ElboTerms) -> Option<(usize, &'static str)> {
    let terms = [("L_rec", Some(t.rec)), ("L_kl", Some(t.kl)), ("L_data", t.data), ("L_pde", t.pde)];
    for (name, v) in terms {
        if let Some(v) = v {
            if let Some(r) = g.value(v).data().iter().position(|x| !x.is_finite()) {
                return Some((r, name));
            }
        }
    }
    None
}

/// Epoch means of the batch losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: BatchLoss,
}

pub fn write_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,L_rec,L_kl,L_data,L_pde,total")?;
    for e in log {
        let l = e.loss;
        writeln!(f, "{},{:e},{:e},{:e},{:e},{:e}", e.epoch, l.rec, l.kl, l.data, l.pde, l.total)?;
    }
    Ok(())
}

/// Per-channel spatial means of the response of a homogeneous medium whose
/// conductivity is the midpoint of the Wiener bounds at volume fraction `vf`.
/// Under the field-recovery loading the mean temperature of a homogeneous
/// medium is 1/4 by superposition of the four rotated problems.
pub fn reference_response(task: Task, vf: f64) -> Vec<f64> {
    let (lo, hi) = oracle::wiener_bounds(vf);
    let k = 0.5 * (lo + hi);
    match task {
        Task::Property => vec![0.5, k, 0.0, 0.5, 0.0, k],
        Task::Field => vec![0.25],
    }
}

/// Start the response decoder's output bias at [`reference_response`] for the
/// dataset's mean volume fraction. Uses microstructures only, never labels.
/// Without it the bias lags the O(κ) flux scale for hundreds of steps and the
/// decoder borrows β as an amplitude, driving the Tanh head into saturation.
pub fn init_output_bias(model: &mut Model, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let vf = data.micro.iter().map(Microstructure::volume_fraction).sum::<f64>() / data.len() as f64;
    let r = reference_response(model.config.task, vf);
    let b0 = model.u_decoder.b0;
    model.store.get_mut(b0).data_mut().copy_from_slice(&r);
    Ok(())
}

/// Train a fresh model seeded by `cfg.seed`.
///
/// With `out` set, writes the final checkpoint there, snapshots under
/// `out/snapshots/epoch_NNNN`, and `out/loss_log.csv`.
pub fn train(data: &Dataset, model_cfg: ModelConfig, cfg: &TrainConfig, out: Option<&Path>) -> Result<(Model, Vec<EpochLog>)> {
    cfg.validate(data.len())?;
    if model_cfg.k != data.k() {
        return Err(Error::invalid(format!("model k = {} does not match dataset k = {}", model_cfg.k, data.k())));
    }
    if cfg.use_labeled {
        data.task_fields(cfg.task)?;
    }
    let mut model = Model::new(model_cfg, cfg.seed)?;
    init_output_bias(&mut model, data)?;
    let mut adam = AdamState::new(model.store.tensors());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let extra = |epoch: usize| serde_json::json!({ "train": cfg, "epochs_done": epoch });

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, 1), epoch as u64));
        order.shuffle(&mut rng);
        let lr = learning_rate(cfg.lr, cfg.lr_period, epoch);
        let mut acc = BatchLoss::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let ctx = BatchContext::new(cfg, data.grid(), epoch, b)?;
            let mut g = Graph::new();
            let terms = elbo(&mut g, &model, data, idx, cfg, &ctx)?;
            if let Some((row, term)) = first_non_finite(&g, &terms) {
                return Err(Error::Diverged {
                    epoch,
                    sample: idx[row],
                    term: term.into(),
                });
            }
            let neg = g.neg(terms.mean);
            let grads = g.param_grads(neg, &model.store)?;
            if let Some(bad) = grads.iter().position(|t| !t.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    sample: idx[0],
                    term: format!("gradient of {}", model.store.name(bad)),
                });
            }
            adam.step(model.store.tensors_mut(), &grads, lr)?;
            let s = terms.summary(&g);
            acc.rec += s.rec;
            acc.kl += s.kl;
            acc.data += s.data;
            acc.pde += s.pde;
            acc.total += s.total;
            batches += 1;
        }
        let n = batches as f64;
        let loss = BatchLoss {
            rec: acc.rec / n,
            kl: acc.kl / n,
            data: acc.data / n,
            pde: acc.pde / n,
            total: acc.total / n,
        };
        log::info!("epoch {epoch}: elbo {:.4e} (rec {:.3e}, kl {:.3e}, data {:.3e}, pde {:.3e})", loss.total, loss.rec, loss.kl, loss.data, loss.pde);
        log.push(EpochLog { epoch, loss });
        if let Some(dir) = out {
            if cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0 && epoch + 1 < cfg.epochs {
                model.save(&dir.join("snapshots").join(format!("epoch_{:04}", epoch + 1)), extra(epoch + 1))?;
            }
        }
    }
    if let Some(dir) = out {
        model.save(dir, extra(cfg.epochs))?;
        write_loss_log(&dir.join("loss_log.csv"), &log)?;
    }
    Ok((model, log))
}
