//! Two-phase microstructure generation: spectral Gaussian random fields,
//! volume-fraction thresholding and Cahn–Hilliard smoothing.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Conductivity of phase 1 (pixels with value 1).
pub const KAPPA1: f64 = 10.0;
/// Conductivity of phase 0.
pub const KAPPA2: f64 = 2.0;

/// Binary `k × k` image on the unit square; pixel `(i, j)` sits at
/// `((j + 0.5) / k, (i + 0.5) / k)`, so row `i` indexes `y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Microstructure {
    k: usize,
    phase: Vec<u8>,
}

impl Microstructure {
    pub fn new(k: usize, phase: Vec<u8>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("grid extent must be at least 2, got {k}")));
        }
        if phase.len() != k * k {
            return Err(Error::invalid(format!("expected {} pixels, got {}", k * k, phase.len())));
        }
        if phase.iter().any(|&p| p > 1) {
            return Err(Error::invalid("phase values must be 0 or 1"));
        }
        Ok(Microstructure { k, phase })
    }

    pub fn uniform(k: usize, value: u8) -> Result<Self> {
        Self::new(k, vec![value; k * k])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn phase(&self) -> &[u8] {
        &self.phase
    }

    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.phase[i * self.k + j]
    }

    /// Fraction of phase-1 pixels.
    pub fn volume_fraction(&self) -> f64 {
        self.phase.iter().map(|&p| p as usize).sum::<usize>() as f64 / self.phase.len() as f64
    }

    /// Conductivity at pixel `(i, j)`.
    pub fn conductivity(&self, i: usize, j: usize) -> f64 {
        if self.at(i, j) == 1 {
            KAPPA1
        } else {
            KAPPA2
        }
    }

    /// Nearest-pixel conductivity at a point of the unit square.
    pub fn conductivity_at(&self, x: f64, y: f64) -> f64 {
        let k = self.k as f64;
        let j = ((x * k).floor().max(0.0) as usize).min(self.k - 1);
        let i = ((y * k).floor().max(0.0) as usize).min(self.k - 1);
        self.conductivity(i, j)
    }

    /// Phase values as `0.0 / 1.0`.
    pub fn as_f64(&self) -> Vec<f64> {
        self.phase.iter().map(|&p| p as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub phi: f64,
    pub k: usize,
    pub seed: u64,
    /// Centered integer frequencies are divided by this before entering the
    /// spectral density. Defaults to `k / 8`.
    pub freq_scale: f64,
}

impl GrfSpec {
    pub fn new(phi: f64, k: usize, seed: u64) -> Self {
        GrfSpec {
            phi,
            k,
            seed,
            freq_scale: k as f64 / 8.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1.0..=9.0).contains(&self.phi) {
            return Err(Error::invalid(format!("phi must lie in [1, 9], got {}", self.phi)));
        }
        if self.k < 2 {
            return Err(Error::invalid("grid extent must be at least 2"));
        }
        if !(self.freq_scale > 0.0) {
            return Err(Error::invalid("frequency scale must be positive"));
        }
        Ok(())
    }
}

/// `S(kx, ky) = φ·exp(−kx²) + (10 − φ)·exp(−ky²)`.
pub fn spectral_density(phi: f64, kx: f64, ky: f64) -> f64 {
    phi * (-kx * kx).exp() + (10.0 - phi) * (-ky * ky).exp()
}

/// Signed (fft-shifted) integer frequency of DFT bin `idx` on `n` points.
fn centered_freq(idx: usize, n: usize) -> f64 {
    if idx < n.div_ceil(2) {
        idx as f64
    } else {
        idx as f64 - n as f64
    }
}

struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        plan.process(buf);
        let mut col = vec![Complex64::default(); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = buf[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                buf[i * n + j] = col[i];
            }
        }
        if inverse {
            let s = 1.0 / (n * n) as f64;
            for v in buf.iter_mut() {
                *v *= s;
            }
        }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false)
    }

    fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true)
    }
}

/// Real `k × k` Gaussian random field with spectral density [`spectral_density`].
pub fn sample_grf(spec: &GrfSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.k;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buf = Vec::with_capacity(n * n);
    for i in 0..n {
        let ky = centered_freq(i, n) / spec.freq_scale;
        for j in 0..n {
            let kx = centered_freq(j, n) / spec.freq_scale;
            let amp = spectral_density(spec.phi, kx, ky).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            buf.push(Complex64::new(re * amp, im * amp));
        }
    }
    Fft2::new(n).inverse(&mut buf);
    Ok(buf.into_iter().map(|c| c.re).collect())
}

/// Mark the top `⌈vf·k²⌉` pixels of `field` (row-major, `k × k`) as phase 1.
///
/// Ties are broken by pixel index. A constant field has no ordering; the
/// first pixels in row-major order are used and a warning is logged.
pub fn threshold_to_vf(field: &[f64], k: usize, vf: f64) -> Result<Microstructure> {
    if !(vf > 0.0 && vf < 1.0) {
        return Err(Error::invalid(format!("volume fraction must lie in (0, 1), got {vf}")));
    }
    if field.len() != k * k {
        return Err(Error::invalid(format!("field has {} values, expected {}", field.len(), k * k)));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("random field".into()));
    }
    let total = k * k;
    let n1 = ((vf * total as f64).ceil() as usize).clamp(1, total - 1);
    let mut phase = vec![0u8; total];
    let first = field[0];
    if field.iter().all(|&v| v == first) {
        log::warn!("degenerate field (all values equal); assigning the first {n1} pixels to phase 1");
        phase[..n1].fill(1);
        return Microstructure::new(k, phase);
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    for &idx in &order[..n1] {
        phase[idx] = 1;
    }
    Microstructure::new(k, phase)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChSpec {
    /// Mobility / diffusion coefficient `D`.
    pub d: f64,
    /// Interface parameter `γ`.
    pub gamma: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Grid spacing in the equation's length units; the image spans `k·dx`.
    pub dx: f64,
}

impl Default for ChSpec {
    fn default() -> Self {
        ChSpec {
            d: 50.0,
            gamma: 1.0,
            t_end: 10.0,
            dt: 0.01,
            dx: 2.0,
        }
    }
}

impl ChSpec {
    fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.gamma > 0.0 && self.dx > 0.0) {
            return Err(Error::invalid("Cahn-Hilliard D, gamma and dx must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return Err(Error::invalid(format!("need 0 < dt <= t_end, got dt={} t_end={}", self.dt, self.t_end)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Semi-implicit Fourier-spectral Cahn–Hilliard integrator on a periodic
/// `k × k` grid: the `−Dγ∇⁴` term is implicit, `D∇²(c³ − c)` explicit.
pub struct CahnHilliard {
    spec: ChSpec,
    k: usize,
    fft: Fft2,
    /// `|k|²` per bin.
    k2: Vec<f64>,
}

impl CahnHilliard {
    pub fn new(k: usize, spec: ChSpec) -> Result<Self> {
        spec.validate()?;
        let len = k as f64 * spec.dx;
        let mut k2 = Vec::with_capacity(k * k);
        for i in 0..k {
            let ky = 2.0 * std::f64::consts::PI * centered_freq(i, k) / len;
            for j in 0..k {
                let kx = 2.0 * std::f64::consts::PI * centered_freq(j, k) / len;
                k2.push(kx * kx + ky * ky);
            }
        }
        Ok(CahnHilliard {
            spec,
            k,
            fft: Fft2::new(k),
            k2,
        })
    }

    /// Advance `c` in place by one step.
    pub fn step(&self, c: &mut [f64]) {
        let (d, gamma, dt) = (self.spec.d, self.spec.gamma, self.spec.dt);
        let mut ch: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut nl: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v * v * v - v, 0.0)).collect();
        self.fft.forward(&mut ch);
        self.fft.forward(&mut nl);
        for ((a, b), &q) in ch.iter_mut().zip(&nl).zip(&self.k2) {
            *a = (*a - *b * (dt * d * q)) / (1.0 + dt * d * gamma * q * q);
        }
        self.fft.inverse(&mut ch);
        for (v, z) in c.iter_mut().zip(&ch) {
            *v = z.re;
        }
    }

    /// Discrete Ginzburg–Landau energy `Σ ¼(c²−1)² + ½γ|∇c|²` with a
    /// spectral gradient.
    pub fn free_energy(&self, c: &[f64]) -> f64 {
        let bulk: f64 = c.iter().map(|&v| 0.25 * (v * v - 1.0).powi(2)).sum();
        let mut ch: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut ch);
        let n = (self.k * self.k) as f64;
        // Parseval: Σ|∇c|² = (1/N) Σ |k|² |ĉ|².
        let grad: f64 = ch.iter().zip(&self.k2).map(|(z, &q)| q * z.norm_sqr()).sum::<f64>() / n;
        bulk + 0.5 * self.spec.gamma * grad
    }

    /// Run every step, calling `observe(step, c)` before the first step and
    /// after each one.
    pub fn evolve_observed(&self, c: &mut [f64], mut observe: impl FnMut(usize, &[f64])) -> Result<()> {
        observe(0, c);
        for step in 1..=self.spec.steps() {
            self.step(c);
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Unstable { step, dt: self.spec.dt });
            }
            observe(step, c);
        }
        Ok(())
    }
}

/// Evolve a binary microstructure under Cahn–Hilliard and re-binarize by sign.
pub fn cahn_hilliard_evolve(m: &Microstructure, spec: &ChSpec) -> Result<Microstructure> {
    let ch = CahnHilliard::new(m.k(), spec.clone())?;
    let mut c: Vec<f64> = m.phase().iter().map(|&p| 2.0 * p as f64 - 1.0).collect();
    ch.evolve_observed(&mut c, |_, _| {})?;
    Microstructure::new(m.k(), c.iter().map(|&v| u8::from(v >= 0.0)).collect())
}

/// Everything that controls dataset generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub vf: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub grf_freq_scale: f64,
    pub ch: ChSpec,
}

impl GenConfig {
    pub fn new(n: usize, k: usize, seed: u64) -> Self {
        GenConfig {
            n,
            k,
            seed,
            vf: 1.0 / 3.0,
            phi_min: 1.0,
            phi_max: 9.0,
            grf_freq_scale: k as f64 / 8.0,
            ch: ChSpec::default(),
        }
    }
}

/// Per-sample seeds: the φ draw and the GRF noise use separate streams.
pub fn sample_seeds(seed: u64, index: usize) -> (u64, u64) {
    let s = derive_seed(seed, index as u64);
    (derive_seed(s, 0), derive_seed(s, 1))
}

/// φ for sample `index`, uniform on `[phi_min, phi_max]`.
pub fn sample_phi(cfg: &GenConfig, index: usize) -> f64 {
    let (phi_seed, _) = sample_seeds(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(phi_seed);
    if cfg.phi_max > cfg.phi_min {
        rng.random_range(cfg.phi_min..=cfg.phi_max)
    } else {
        cfg.phi_min
    }
}

/// Generate one sample: GRF → threshold → Cahn–Hilliard.
pub fn generate_sample(cfg: &GenConfig, index: usize) -> Result<(Microstructure, f64)> {
    let phi = sample_phi(cfg, index);
    let (_, grf_seed) = sample_seeds(cfg.seed, index);
    let spec = GrfSpec {
        phi,
        k: cfg.k,
        seed: grf_seed,
        freq_scale: cfg.grf_freq_scale,
    };
    let field = sample_grf(&spec)?;
    let m = threshold_to_vf(&field, cfg.k, cfg.vf)?;
    Ok((cahn_hilliard_evolve(&m, &cfg.ch)?, phi))
}

/// `n` microstructures and their φ values; a pure function of `cfg`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(Vec<Microstructure>, Vec<f64>)> {
    if cfg.n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let out: Result<Vec<_>> = (0..cfg.n).into_par_iter().map(|i| generate_sample(cfg, i)).collect();
    Ok(out?.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_at_origin_is_ten() {
        for phi in [1.0, 2.5, 5.0, 9.0] {
            assert_eq!(spectral_density(phi, 0.0, 0.0), 10.0);
        }
    }

    #[test]
    fn grf_is_deterministic_and_validates_phi() {
        let s = GrfSpec::new(4.2, 16, 99);
        assert_eq!(sample_grf(&s).unwrap(), sample_grf(&s).unwrap());
        assert!(sample_grf(&GrfSpec::new(0.5, 16, 1)).is_err());
        assert!(sample_grf(&GrfSpec::new(9.5, 16, 1)).is_err());
    }

    /// Marginal power spectra along x and along y, averaged over 100 seeds.
    fn marginal_spectra(phi: f64, k: usize) -> (Vec<f64>, Vec<f64>) {
        let fft = Fft2::new(k);
        let mut px = vec![0.0; k];
        let mut py = vec![0.0; k];
        for seed in 0..100 {
            let f = sample_grf(&GrfSpec::new(phi, k, seed)).unwrap();
            let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.forward(&mut buf);
            for i in 0..k {
                for j in 0..k {
                    let p = buf[i * k + j].norm_sqr();
                    px[j] += p;
                    py[i] += p;
                }
            }
        }
        (px, py)
    }

    fn asymmetry(phi: f64) -> f64 {
        let (px, py) = marginal_spectra(phi, 32);
        let diff: f64 = px.iter().zip(&py).map(|(a, b)| (a - b).abs()).sum();
        diff / px.iter().sum::<f64>()
    }

    #[test]
    fn grf_power_spectrum_is_axis_symmetric_at_phi_five() {
        let a = asymmetry(5.0);
        assert!(a < 0.05, "relative asymmetry {a}");
        // The statistic does detect anisotropy.
        assert!(asymmetry(1.5) > 0.2);
    }

    #[test]
    fn threshold_monotone_field() {
        let k = 32;
        let field: Vec<f64> = (0..k * k).map(|idx| (idx / k) as f64).collect();
        let m = threshold_to_vf(&field, k, 1.0 / 3.0).unwrap();
        let vf = m.volume_fraction();
        assert!((vf - 1.0 / 3.0).abs() <= 1.0 / 1024.0);
        // Highest rows are phase 1.
        assert_eq!(m.at(k - 1, 0), 1);
        assert_eq!(m.at(0, 0), 0);
        assert!(threshold_to_vf(&field, k, 1.0).is_err());
        assert!(threshold_to_vf(&field, k, 0.0).is_err());
    }

    #[test]
    fn threshold_degenerate_field_fills_row_major() {
        let m = threshold_to_vf(&[0.5; 16], 4, 0.25).unwrap();
        assert_eq!(&m.phase()[..5], &[1, 1, 1, 1, 0]);
    }

    #[test]
    fn grf_threshold_fractions_are_quantized_vf() {
        for seed in 0..100 {
            let f = sample_grf(&GrfSpec::new(1.0 + (seed % 9) as f64, 32, seed)).unwrap();
            let m = threshold_to_vf(&f, 32, 1.0 / 3.0).unwrap();
            assert!((m.volume_fraction() - 1.0 / 3.0).abs() <= 1.0 / 1024.0);
        }
    }

    #[test]
    fn uniform_state_is_a_fixed_point() {
        let m = Microstructure::uniform(16, 1).unwrap();
        let ch = CahnHilliard::new(16, ChSpec::default()).unwrap();
        let mut c = vec![1.0; 256];
        for _ in 0..50 {
            ch.step(&mut c);
        }
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(cahn_hilliard_evolve(&m, &ChSpec::default()).unwrap(), m);
    }

    #[test]
    fn evolution_conserves_mean() {
        let f = sample_grf(&GrfSpec::new(3.0, 32, 5)).unwrap();
        let m = threshold_to_vf(&f, 32, 1.0 / 3.0).unwrap();
        let ch = CahnHilliard::new(32, ChSpec::default()).unwrap();
        let mut c: Vec<f64> = m.phase().iter().map(|&p| 2.0 * p as f64 - 1.0).collect();
        let m0 = c.iter().sum::<f64>() / c.len() as f64;
        ch.evolve_observed(&mut c, |_, _| {}).unwrap();
        let m1 = c.iter().sum::<f64>() / c.len() as f64;
        assert!((m1 - m0).abs() < 1e-10);
    }

    #[test]
    fn bad_ch_spec_is_rejected() {
        let spec = ChSpec { dt: 0.0, ..ChSpec::default() };
        assert!(CahnHilliard::new(8, spec).is_err());
        let spec = ChSpec { dt: 20.0, ..ChSpec::default() };
        assert!(CahnHilliard::new(8, spec).is_err());
    }

    #[test]
    fn dataset_is_deterministic_and_composes() {
        let cfg = GenConfig::new(3, 16, 7);
        let (a, pa) = generate_dataset(&cfg).unwrap();
        let (b, pb) = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let (one, phi) = generate_sample(&cfg, 1).unwrap();
        assert_eq!(one, a[1]);
        assert_eq!(phi, pa[1]);
        assert!(generate_dataset(&GenConfig::new(0, 16, 7)).is_err());
    }
}
