//! On-disk datasets: `meta.json`, `micro.u8`, and per-task oracle labels.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microgen::{generate_dataset, GenConfig, Microstructure};
use crate::oracle::{label_dataset, CG_TOL};
use crate::task::Task;

pub const DATASET_VERSION: u32 = 1;

/// Label provenance recorded in `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMeta {
    pub grid: usize,
    pub tasks: Vec<Task>,
    pub solver_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub config: GenConfig,
    pub phis: Vec<f64>,
    pub volume_fractions: Vec<f64>,
    #[serde(default)]
    pub labels: Option<LabelMeta>,
}

/// Labels are held at file precision (`f32`) so a read/write cycle is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub micro: Vec<Microstructure>,
    /// Per task: `n × channels × grid²` values, sample-major.
    pub fields: Vec<(Task, Vec<f32>)>,
    /// `n × 2` rows of `(κ_h, κ_v)`.
    pub kappa: Vec<[f32; 2]>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn f32_bytes(v: impl IntoIterator<Item = f32>) -> Vec<u8> {
    v.into_iter().flat_map(f32::to_le_bytes).collect()
}

fn read_f32(path: &Path, expect: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * expect {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 4 * expect, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect())
}

impl Dataset {
    pub fn generate(cfg: &GenConfig) -> Result<Self> {
        let (micro, phis) = generate_dataset(cfg)?;
        let volume_fractions = micro.iter().map(Microstructure::volume_fraction).collect();
        Ok(Dataset {
            meta: DatasetMeta {
                format_version: DATASET_VERSION,
                config: cfg.clone(),
                phis,
                volume_fractions,
                labels: None,
            },
            micro,
            fields: Vec::new(),
            kappa: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.micro.len()
    }

    pub fn is_empty(&self) -> bool {
        self.micro.is_empty()
    }

    pub fn k(&self) -> usize {
        self.meta.config.k
    }

    /// Label grid size, if labeled.
    pub fn grid(&self) -> Option<usize> {
        self.meta.labels.as_ref().map(|l| l.grid)
    }

    /// Replace all labels with oracle solutions on a `grid × grid` mesh.
    pub fn label(&mut self, grid: usize, tasks: &[Task]) -> Result<()> {
        let k = self.k();
        if grid == 0 || grid % k != 0 {
            return Err(Error::invalid(format!("label grid {grid} must be a positive multiple of k = {k}")));
        }
        if tasks.is_empty() {
            return Err(Error::invalid("at least one task is required"));
        }
        let mut uniq: Vec<Task> = Vec::new();
        for &t in tasks {
            if !uniq.contains(&t) {
                uniq.push(t);
            }
        }
        let mut fields = Vec::with_capacity(uniq.len());
        let mut kappa = Vec::new();
        for &task in &uniq {
            let labels = label_dataset(&self.micro, grid, task)?;
            if kappa.is_empty() {
                kappa = labels.iter().map(|l| [l.kappa.kappa_h as f32, l.kappa.kappa_v as f32]).collect();
            }
            fields.push((task, labels.iter().flat_map(|l| l.fields.iter().map(|&v| v as f32)).collect()));
        }
        self.fields = fields;
        self.kappa = kappa;
        self.meta.labels = Some(LabelMeta {
            grid,
            tasks: uniq,
            solver_tol: CG_TOL,
        });
        Ok(())
    }

    /// All labels of `task`, or an error when the dataset lacks them.
    pub fn task_fields(&self, task: Task) -> Result<&[f32]> {
        self.fields
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("dataset has no '{task}' labels; run the label command first")))
    }

    /// Labels of one sample: `channels × grid²` values.
    pub fn sample_fields(&self, task: Task, index: usize) -> Result<&[f32]> {
        let g = self.grid().ok_or_else(|| Error::invalid("dataset is unlabeled"))?;
        let per = task.channels() * g * g;
        let all = self.task_fields(task)?;
        all.get(index * per..(index + 1) * per).ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))
    }

    /// `(κ_h, κ_v)` of sample `index`.
    pub fn kappa(&self, index: usize) -> Result<[f64; 2]> {
        let [h, v] = *self.kappa.get(index).ok_or_else(|| Error::invalid("dataset is unlabeled"))?;
        Ok([h as f64, v as f64])
    }

    /// A dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("sample index {bad} out of range")));
        }
        let mut meta = self.meta.clone();
        meta.phis = indices.iter().map(|&i| self.meta.phis[i]).collect();
        meta.volume_fractions = indices.iter().map(|&i| self.meta.volume_fractions[i]).collect();
        meta.config.n = indices.len();
        let fields = match self.grid() {
            Some(g) => self
                .fields
                .iter()
                .map(|(t, v)| {
                    let per = t.channels() * g * g;
                    (*t, indices.iter().flat_map(|&i| v[i * per..(i + 1) * per].iter().copied()).collect())
                })
                .collect(),
            None => Vec::new(),
        };
        Ok(Dataset {
            meta,
            micro: indices.iter().map(|&i| self.micro[i].clone()).collect(),
            fields,
            kappa: if self.kappa.is_empty() { Vec::new() } else { indices.iter().map(|&i| self.kappa[i]).collect() },
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("meta.json"), &self.meta)?;
        let bytes: Vec<u8> = self.micro.iter().flat_map(|m| m.phase().iter().copied()).collect();
        fs::write(dir.join("micro.u8"), bytes)?;
        for (task, v) in &self.fields {
            fs::write(dir.join(format!("fields_{task}.f32")), f32_bytes(v.iter().copied()))?;
        }
        if !self.kappa.is_empty() {
            fs::write(dir.join("kappa.f32"), f32_bytes(self.kappa.iter().flatten().copied()))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        if !meta_path.exists() {
            return Err(Error::format(&meta_path, "not a dataset directory (meta.json missing)"));
        }
        let text = fs::read_to_string(&meta_path)?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        if meta.format_version != DATASET_VERSION {
            return Err(Error::format(&meta_path, format!("unsupported format version {}", meta.format_version)));
        }
        let (n, k) = (meta.config.n, meta.config.k);
        if meta.phis.len() != n || meta.volume_fractions.len() != n {
            return Err(Error::format(&meta_path, "per-sample metadata does not match n"));
        }
        let micro_path = dir.join("micro.u8");
        let bytes = fs::read(&micro_path)?;
        if bytes.len() != n * k * k {
            return Err(Error::format(&micro_path, format!("expected {} bytes, found {}", n * k * k, bytes.len())));
        }
        let micro = bytes
            .chunks_exact(k * k)
            .map(|c| Microstructure::new(k, c.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(&micro_path, e.to_string()))?;
        let mut fields = Vec::new();
        let mut kappa = Vec::new();
        if let Some(l) = &meta.labels {
            for &task in &l.tasks {
                let per = task.channels() * l.grid * l.grid;
                fields.push((task, read_f32(&dir.join(format!("fields_{task}.f32")), n * per)?));
            }
            kappa = read_f32(&dir.join("kappa.f32"), 2 * n)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        }
        Ok(Dataset { meta, micro, fields, kappa })
    }
}
