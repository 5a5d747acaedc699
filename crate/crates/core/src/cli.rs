//! Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::design::{default_sensors, optimize, DesignReport, DesignRun, DesignSpec, DesignTarget, Utility};
use crate::error::{Error, Result};
use crate::microgen::GenConfig;
use crate::networks::{Model, ModelConfig};
use crate::oracle::{self, BcSpec};
use crate::plots;
use crate::task::Task;
use crate::training::{train, TrainConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "MICRODESIGN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "microdesign", version, about = "Generative neural-operator pipeline for two-phase microstructure design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate microstructures (GRF + Cahn–Hilliard).
    GenData(GenArgs),
    /// Attach oracle labels to a dataset.
    Label(LabelArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Optimize designs in latent space.
    Design(DesignArgs),
    /// Re-evaluate saved designs with the oracle.
    Eval(EvalArgs),
    /// Render SVG plots and CSV tables for a design report.
    Plots(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, value_delimiter = ',', default_value = "property,field")]
    pub tasks: Vec<Task>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Arch {
    /// Full-size networks.
    Full,
    /// Reduced networks for single-machine runs.
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub task: Task,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 25)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.25)]
    pub lambda_pde: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_data: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda_kl: f64,
    /// Drop the labeled-data term.
    #[arg(long)]
    pub unlabeled_only: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = Arch::Full)]
    pub arch: Arch,
    /// Label-grid points sampled per batch for the data term (default: all).
    #[arg(long)]
    pub data_points: Option<usize>,
    /// Disable random symmetry augmentation of training samples.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(subcommand)]
    pub problem: Problem,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target specification file; explicit flags override its run settings.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub oracle_grid: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Problem {
    /// Effective property inside a box.
    P1 {
        #[command(flatten)]
        run: RunArgs,
        /// `h_lo,h_hi,v_lo,v_hi`.
        #[arg(long, value_parser = parse_box)]
        target_box: Option<[f64; 4]>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Microstructure recovery from sensor temperatures.
    P2 {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset holding the reference sample.
        #[arg(long)]
        reference_data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        reference_index: usize,
        /// Sensors per axis on a uniform interior grid.
        #[arg(long, default_value_t = 8)]
        sensors: usize,
    },
    /// Maximize the anisotropy ratio κ_h / κ_v.
    P3 {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub designs: PathBuf,
    /// Oracle grid (default: the one stored in the report).
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Labeled dataset whose κ values are drawn behind the designs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: f64,
}

struct Ctx {
    argv: Vec<String>,
    start: Instant,
}

impl Ctx {
    fn manifest(&self, dir: &Path, command: &str, config: serde_json::Value, seeds: Vec<u64>, inputs: Vec<PathBuf>) -> Result<()> {
        let m = RunManifest {
            format_version: MANIFEST_VERSION,
            command: command.into(),
            argv: self.argv.clone(),
            config,
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            outputs: vec![dir.to_path_buf()],
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
        };
        let mut f = fs::File::create(dir.join(format!("manifest_{command}.json")))?;
        serde_json::to_writer_pretty(&mut f, &m)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

fn parse_box(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"))).collect::<std::result::Result<_, _>>()?;
    let b: [f64; 4] = v.try_into().map_err(|_| "expected h_lo,h_hi,v_lo,v_hi".to_string())?;
    if !(b.iter().all(|x| x.is_finite()) && b[0] <= b[1] && b[2] <= b[3]) {
        return Err("box bounds must be finite with lo <= hi".into());
    }
    Ok(b)
}

fn ensure_empty(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::invalid(format!("output directory {} is not empty (use --force)", dir.display())));
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn gen_data(ctx: &Ctx, a: &GenArgs) -> Result<()> {
    ensure_empty(&a.out, a.force)?;
    let cfg = GenConfig::new(a.n as usize, a.k as usize, a.seed);
    let d = Dataset::generate(&cfg)?;
    d.write(&a.out)?;
    println!("wrote {} microstructures to {}", d.len(), a.out.display());
    let config = serde_json::json!({ "gen": cfg, "phis": d.meta.phis, "volume_fractions": d.meta.volume_fractions });
    ctx.manifest(&a.out, "gen-data", config, vec![a.seed], vec![])
}

fn label(ctx: &Ctx, a: &LabelArgs) -> Result<()> {
    let mut d = Dataset::read(&a.data)?;
    d.label(a.grid, &a.tasks)?;
    d.write(&a.data)?;
    println!("labeled {} samples on a {}x{} grid", d.len(), a.grid, a.grid);
    let config = serde_json::json!({ "grid": a.grid, "tasks": a.tasks, "solver_tol": oracle::CG_TOL });
    ctx.manifest(&a.data, "label", config, vec![], vec![a.data.clone()])
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    ensure_empty(&a.out, a.force)?;
    let data = Dataset::read(&a.data)?;
    let mut cfg = TrainConfig::new(a.task);
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.lambda_pde = a.lambda_pde;
    cfg.lambda_data = a.lambda_data;
    cfg.lambda_kl = a.lambda_kl;
    cfg.use_labeled = !a.unlabeled_only;
    cfg.seed = a.seed;
    cfg.lr = a.lr;
    cfg.data_points = a.data_points;
    cfg.augment = !a.no_augment;
    if a.unlabeled_only && a.task == Task::Field {
        log::warn!("field recovery is scored against oracle fields; training without labels may weaken it");
    }
    let model_cfg = match a.arch {
        Arch::Full => ModelConfig::full(data.k(), a.task),
        Arch::Desk => ModelConfig::desk(data.k(), a.task),
    };
    let (_, log) = train(&data, model_cfg.clone(), &cfg, Some(&a.out))?;
    if let Some(last) = log.last() {
        println!("trained {} epochs; final ELBO {:.6e}", log.len(), last.loss.total);
    }
    let config = serde_json::json!({ "train": cfg, "model": model_cfg });
    ctx.manifest(&a.out, "train", config, vec![a.seed], vec![a.data.clone()])
}

fn apply_run(mut run: DesignRun, a: &RunArgs) -> DesignRun {
    if let Some(v) = a.restarts {
        run.restarts = v;
    }
    if let Some(v) = a.steps {
        run.steps = v;
    }
    if let Some(v) = a.lr {
        run.lr = v;
    }
    if let Some(v) = a.seed {
        run.seed = v;
    }
    if let Some(v) = a.oracle_grid {
        run.oracle_grid = v;
    }
    run
}

fn read_spec(path: &Path) -> Result<DesignSpec> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// P2 target from a dataset sample: oracle temperatures at an `n × n`
/// sensor grid plus the sample as reference.
pub fn p2_target_from_sample(data: &Dataset, index: usize, n: usize) -> Result<DesignTarget> {
    let m = data.micro.get(index).ok_or_else(|| Error::invalid(format!("reference index {index} out of range")))?;
    let grid = data.grid().unwrap_or(64);
    let sensors = default_sensors(n);
    let t = oracle::solve(m, &BcSpec::field_recovery(), grid)?.t;
    let values = oracle::sample_sensors(&t, grid, &sensors)?;
    Ok(DesignTarget::P2 {
        sensors,
        values,
        tau_u: None,
        reference: Some(m.phase().to_vec()),
    })
}

fn design_cmd(ctx: &Ctx, p: &Problem) -> Result<()> {
    let (run_args, spec) = match p {
        Problem::P1 { run, target_box, tau } => {
            let mut spec = match &run.target {
                Some(f) => read_spec(f)?,
                None => DesignSpec {
                    target: DesignTarget::P1 {
                        kappa_h: [3.0, 4.0],
                        kappa_v: [3.0, 4.0],
                        tau: 10.0,
                    },
                    run: DesignRun::default(),
                },
            };
            let DesignTarget::P1 { kappa_h, kappa_v, tau: t } = &mut spec.target else {
                return Err(Error::invalid("target file is not a p1 target"));
            };
            if let Some(b) = target_box {
                *kappa_h = [b[0], b[1]];
                *kappa_v = [b[2], b[3]];
            } else if run.target.is_none() {
                return Err(Error::invalid("p1 needs --target-box or --target"));
            }
            if let Some(v) = tau {
                *t = *v;
            }
            (run, spec)
        }
        Problem::P2 {
            run,
            reference_data,
            reference_index,
            sensors,
        } => {
            let spec = match (&run.target, reference_data) {
                (Some(f), None) => read_spec(f)?,
                (None, Some(dir)) => DesignSpec {
                    target: p2_target_from_sample(&Dataset::read(dir)?, *reference_index, *sensors)?,
                    run: DesignRun::default(),
                },
                _ => return Err(Error::invalid("p2 needs exactly one of --target or --reference-data")),
            };
            if !matches!(spec.target, DesignTarget::P2 { .. }) {
                return Err(Error::invalid("target file is not a p2 target"));
            }
            (run, spec)
        }
        Problem::P3 { run, alpha } => {
            let mut spec = match &run.target {
                Some(f) => read_spec(f)?,
                None => DesignSpec {
                    target: DesignTarget::P3 {
                        utility: Utility::Anisotropy,
                        alpha: 10.0,
                    },
                    run: DesignRun::default(),
                },
            };
            let DesignTarget::P3 { alpha: a, .. } = &mut spec.target else {
                return Err(Error::invalid("target file is not a p3 target"));
            };
            if let Some(v) = alpha {
                *a = *v;
            }
            (run, spec)
        }
    };
    ensure_empty(&run_args.out, run_args.force)?;
    let run = apply_run(spec.run.clone(), run_args);
    let (model, _) = Model::load(&run_args.checkpoint)?;
    let report = optimize(&model, &spec.target, &run)?;
    report.write(&run_args.out)?;
    print_summary(&report);
    let name = spec.target.name();
    let config = to_json(&DesignSpec {
        target: spec.target.clone(),
        run: run.clone(),
    })?;
    let mut inputs = vec![run_args.checkpoint.clone()];
    inputs.extend(run_args.target.clone());
    if let Problem::P2 {
        reference_data: Some(d), ..
    } = p
    {
        inputs.push(d.clone());
    }
    ctx.manifest(&run_args.out, &format!("design_{name}"), config, vec![run.seed], inputs)
}

fn print_summary(r: &DesignReport) {
    let s = &r.summary;
    println!("designs evaluated: {} (failed {}, degenerate {})", s.evaluated, s.failed, s.degenerate);
    for (name, v) in [
        ("success rate", s.success_rate),
        ("mean kappa_h/kappa_v", s.mean_ratio),
        ("mean I_corr", s.mean_i_corr),
        ("best I_corr", s.best_i_corr),
        ("mean sensor error", s.mean_sensor_error),
    ] {
        if let Some(v) = v {
            println!("{name}: {v:.4}");
        }
    }
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let mut report = DesignReport::read(&a.designs)?;
    let grid = a.grid.unwrap_or(report.run.oracle_grid);
    let summary = crate::design::evaluate(&report.target, &report.designs, &mut report.records, grid)?;
    report.summary = summary.clone();
    let mut f = fs::File::create(a.designs.join("eval.json"))?;
    serde_json::to_writer_pretty(&mut f, &serde_json::json!({ "grid": grid, "summary": summary, "records": report.records }))?;
    f.write_all(b"\n")?;
    print_summary(&report);
    ctx.manifest(&a.designs, "eval", serde_json::json!({ "grid": grid }), vec![], vec![a.designs.clone()])
}

fn plots_cmd(ctx: &Ctx, a: &PlotArgs) -> Result<()> {
    let report = DesignReport::read(&a.report)?;
    let training: Vec<[f64; 2]> = match &a.data {
        Some(d) => {
            let data = Dataset::read(d)?;
            (0..data.kappa.len()).map(|i| data.kappa(i)).collect::<Result<_>>()?
        }
        None => Vec::new(),
    };
    let out = a.out.clone().unwrap_or_else(|| a.report.join("plots"));
    let files = plots::write_all(&report, &training, &out)?;
    println!("wrote {} to {}", files.join(", "), out.display());
    let mut inputs = vec![a.report.clone()];
    inputs.extend(a.data.clone());
    ctx.manifest(&out, "plots", serde_json::json!({ "files": files }), vec![], inputs)
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

/// Parse `argv`, run the command, and return the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    let ctx = Ctx { argv, start: Instant::now() };
    let res = match &cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::Label(a) => label(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Design(a) => design_cmd(&ctx, &a.problem),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Plots(a) => plots_cmd(&ctx, a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
