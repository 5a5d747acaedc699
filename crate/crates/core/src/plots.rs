//! Static SVG and CSV renderings of design reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::design::{DesignReport, DesignTarget};
use crate::error::{Error, Result};
use crate::microgen::Microstructure;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 56.0;

struct Axes {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Axes {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..2 {
            if !lo[a].is_finite() {
                (lo[a], hi[a]) = (0.0, 1.0);
            }
            let m = 0.05 * (hi[a] - lo[a]).max(1e-3);
            lo[a] -= m;
            hi[a] += m;
        }
        Axes { lo, hi }
    }

    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.lo[0]) / (self.hi[0] - self.lo[0]) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.lo[1]) / (self.hi[1] - self.lo[1]) * (H - 2.0 * PAD)
    }
}

/// Scatter of `(κ_h, κ_v)` for training samples and designs, with the
/// target box when given.
pub fn kappa_scatter_svg(training: &[[f64; 2]], designs: &[[f64; 2]], target_box: Option<([f64; 2], [f64; 2])>) -> String {
    let mut all: Vec<[f64; 2]> = training.iter().chain(designs).copied().collect();
    if let Some((h, v)) = target_box {
        all.extend([[h[0], v[0]], [h[1], v[1]]]);
    }
    let ax = Axes::fit(all.into_iter());
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (a, label) in [(0, "κ_h"), (1, "κ_v")] {
        for t in 0..=4 {
            let v = ax.lo[a] + (ax.hi[a] - ax.lo[a]) * t as f64 / 4.0;
            if a == 0 {
                let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.2}</text>"#, ax.x(v), H - PAD + 16.0);
            } else {
                let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#, PAD - 4.0, ax.y(v) + 4.0);
            }
        }
        if a == 0 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{label}</text>"#, W / 2.0, H - 12.0);
        } else {
            let _ = writeln!(s, r#"<text x="14" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.1})">{label}</text>"#, H / 2.0, H / 2.0);
        }
    }
    if let Some((h, v)) = target_box {
        let (x0, x1, y0, y1) = (ax.x(h[0]), ax.x(h[1]), ax.y(v[1]), ax.y(v[0]));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="red" stroke-dasharray="4 3"/>"#,
            x1 - x0,
            y1 - y0
        );
    }
    for p in training {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="gray" fill-opacity="0.5"/>"#, ax.x(p[0]), ax.y(p[1]));
    }
    for p in designs {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="steelblue" stroke="black" stroke-width="0.5"/>"#, ax.x(p[0]), ax.y(p[1]));
    }
    s.push_str("</svg>\n");
    s
}

/// Microstructures tiled `cols` per row; phase 1 is black.
pub fn raster_svg(micro: &[Microstructure], cols: usize, cell: f64) -> String {
    let cols = cols.max(1);
    let k = micro.first().map_or(1, |m| m.k());
    let tile = k as f64 * cell;
    let gap = 4.0;
    let rows = micro.len().div_ceil(cols).max(1);
    let (w, h) = (cols as f64 * (tile + gap) + gap, rows as f64 * (tile + gap) + gap);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (n, m) in micro.iter().enumerate() {
        let ox = gap + (n % cols) as f64 * (tile + gap);
        let oy = gap + (n / cols) as f64 * (tile + gap);
        let _ = writeln!(s, r#"<rect x="{ox}" y="{oy}" width="{tile}" height="{tile}" fill="white" stroke="gray"/>"#);
        // Row i is y; the image is drawn with y increasing upward.
        for i in 0..m.k() {
            for j in 0..m.k() {
                if m.at(i, j) == 1 {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="{cell}" height="{cell}"/>"#,
                        ox + j as f64 * cell,
                        oy + (m.k() - 1 - i) as f64 * cell
                    );
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// One row per restart with the predicted and oracle quantities.
pub fn records_csv(report: &DesignReport) -> String {
    let mut s = String::from("restart,failed,degenerate,volume_fraction,objective,pred_kappa_h,pred_kappa_v,oracle_kappa_h,oracle_kappa_v,ratio,inside_box,i_corr\n");
    for r in &report.records {
        let pk = r.predicted_kappa.map(|k| (Some(k[0]), Some(k[1]))).unwrap_or((None, None));
        let ok = r.oracle_kappa.map(|k| (Some(k[0]), Some(k[1]))).unwrap_or((None, None));
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{},{},{},{},{},{},{}",
            r.restart,
            r.failed,
            r.degenerate,
            r.volume_fraction,
            r.objective,
            opt(pk.0),
            opt(pk.1),
            opt(ok.0),
            opt(ok.1),
            opt(r.ratio),
            r.inside_box.map_or_else(String::new, |b| b.to_string()),
            opt(r.i_corr)
        );
    }
    s
}

/// Aggregate metrics as `metric,value` rows.
pub fn summary_csv(report: &DesignReport) -> String {
    let s = &report.summary;
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "evaluated,{}", s.evaluated);
    let _ = writeln!(out, "failed,{}", s.failed);
    let _ = writeln!(out, "degenerate,{}", s.degenerate);
    for (name, v) in [
        ("success_rate", s.success_rate),
        ("mean_ratio", s.mean_ratio),
        ("mean_i_corr", s.mean_i_corr),
        ("best_i_corr", s.best_i_corr),
        ("mean_sensor_error", s.mean_sensor_error),
    ] {
        if let Some(v) = v {
            let _ = writeln!(out, "{name},{v:e}");
        }
    }
    out
}

/// Write every plot and table for `report` into `out`; returns the file names.
pub fn write_all(report: &DesignReport, training_kappa: &[[f64; 2]], out: &Path) -> Result<Vec<String>> {
    if report.records.is_empty() {
        return Err(Error::invalid("report has no designs to plot"));
    }
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        fs::write(out.join(name), body)?;
        files.push(name.to_string());
        Ok(())
    };
    let designed: Vec<[f64; 2]> = report.records.iter().filter(|r| !r.failed).filter_map(|r| r.oracle_kappa).collect();
    if !designed.is_empty() || !training_kappa.is_empty() {
        let target_box = match &report.target {
            DesignTarget::P1 { kappa_h, kappa_v, .. } => Some((*kappa_h, *kappa_v)),
            _ => None,
        };
        put("kappa_scatter.svg", kappa_scatter_svg(training_kappa, &designed, target_box))?;
    }
    if !report.designs.is_empty() {
        put("designs.svg", raster_svg(&report.designs, 10, 3.0))?;
    }
    if let DesignTarget::P2 { reference: Some(r), .. } = &report.target {
        let k = (r.len() as f64).sqrt().round() as usize;
        put("reference.svg", raster_svg(&[Microstructure::new(k, r.clone())?], 1, 6.0))?;
    }
    put("records.csv", records_csv(report))?;
    put("summary.csv", summary_csv(report))?;
    Ok(files)
}
