use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::Flow;
use super::layers::{Activation, Dense, Mlp};
use super::multionet::MultiOnet;
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::microgen::Microstructure;
use crate::task::Task;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Microstructure extent `K`.
    pub k: usize,
    pub task: Task,
    pub d_beta: usize,
    pub encoder_hidden: Vec<usize>,
    pub mu_width: usize,
    pub mu_depth: usize,
    pub u_width: usize,
    pub u_depth: usize,
    pub flow_steps: usize,
    pub flow_hidden: usize,
    pub flow_layers: usize,
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn full(k: usize, task: Task) -> Self {
        ModelConfig {
            k,
            task,
            d_beta: 128,
            encoder_hidden: vec![512, 128],
            mu_width: 256,
            mu_depth: 5,
            u_width: 100,
            u_depth: 5,
            flow_steps: 3,
            flow_hidden: 64,
            flow_layers: 2,
        }
    }

    /// Reduced architecture for desk-scale runs. The encoder and μ-decoder
    /// keep full size: the μ trunk is shared across a batch, and a narrow
    /// one decodes blurry designs that lose phase 1 at the 0.5 threshold.
    pub fn desk(k: usize, task: Task) -> Self {
        ModelConfig {
            k,
            task,
            d_beta: 32,
            encoder_hidden: vec![512, 128],
            mu_width: 256,
            mu_depth: 5,
            u_width: 64,
            u_depth: 3,
            flow_steps: 3,
            flow_hidden: 64,
            flow_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.d_beta < 2 {
            return Err(Error::invalid("model needs k >= 2 and d_beta >= 2"));
        }
        if self.encoder_hidden.contains(&0) || self.mu_width == 0 || self.u_width == 0 || self.flow_hidden == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.mu_depth == 0 || self.u_depth == 0 {
            return Err(Error::invalid("decoder depth must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub mu_decoder: MultiOnet,
    pub u_decoder: MultiOnet,
    pub flow: Flow,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Pixel centers of a `k × k` grid as `[k², 2]` rows `(x, y)`, row-major
/// with row `i` indexing `y`.
pub fn pixel_centers(k: usize) -> Tensor {
    Tensor::from_fn(k * k, 2, |p, c| {
        let (i, j) = (p / k, p % k);
        if c == 0 {
            (j as f64 + 0.5) / k as f64
        } else {
            (i as f64 + 0.5) / k as f64
        }
    })
}

/// Microstructures as a `[B, k²]` matrix of `0/1` values.
pub fn micro_batch(micro: &[&Microstructure]) -> Result<Tensor> {
    let k = micro.first().map(|m| m.k()).ok_or_else(|| Error::invalid("empty microstructure batch"))?;
    let mut data = Vec::with_capacity(micro.len() * k * k);
    for m in micro {
        if m.k() != k {
            return Err(Error::invalid("microstructures in a batch must share k"));
        }
        data.extend(m.phase().iter().map(|&p| p as f64));
    }
    Tensor::matrix(micro.len(), k * k, data)
}

impl Model {
    /// Seeded initialization; the parameter order is fixed by construction.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut fan_in = config.k * config.k;
        for (i, &h) in config.encoder_hidden.iter().enumerate() {
            layers.push(Dense::glorot(&mut store, &format!("encoder.{i}"), fan_in, h, &mut rng));
            fan_in = h;
        }
        let n = config.encoder_hidden.len();
        layers.push(Dense::glorot(&mut store, &format!("encoder.{n}"), fan_in, config.d_beta, &mut rng));
        let encoder = Mlp {
            layers,
            act: Activation::Silu,
            out_act: Activation::Tanh,
        };
        let mu_decoder = MultiOnet::new(&mut store, "mu", config.d_beta, config.mu_width, config.mu_depth, 1, &mut rng)?;
        let u_decoder = MultiOnet::new(
            &mut store,
            "u",
            config.d_beta,
            config.u_width,
            config.u_depth,
            config.task.channels(),
            &mut rng,
        )?;
        let flow = Flow::new(&mut store, config.d_beta, config.flow_steps, config.flow_hidden, config.flow_layers, &mut rng)?;
        Ok(Model {
            config,
            seed,
            store,
            encoder,
            mu_decoder,
            u_decoder,
            flow,
        })
    }

    /// `β = e(2μ̂ − 1)` for a `[B, k²]` batch of 0/1 phases.
    pub fn encode(&self, g: &mut Graph, micro: Var) -> Result<Var> {
        let (b, n) = g.shape(micro);
        let want = self.config.k * self.config.k;
        if n != want {
            return Err(Error::Shape {
                op: "encode",
                lhs: vec![b, n],
                rhs: vec![b, want],
            });
        }
        // Phases enter as ±1: uncentered 0/1 inputs let Adam shift every
        // active first-layer weight the same way and saturate the head.
        let s = g.scale(micro, 2.0);
        let centered = g.add_scalar(s, -1.0);
        self.encoder.forward(g, &self.store, centered)
    }

    /// Phase-1 logits `[B, P]`.
    pub fn mu_logits(&self, g: &mut Graph, beta: Var, points: Var) -> Result<Var> {
        Ok(self.mu_decoder.eval(g, &self.store, beta, points)?[0])
    }

    /// Phase-1 probabilities `[B, P]`.
    pub fn mu_probabilities(&self, g: &mut Graph, beta: Var, points: Var) -> Result<Var> {
        let l = self.mu_logits(g, beta, points)?;
        Ok(g.sigmoid(l))
    }

    /// Response channels, each `[B, P]`.
    pub fn response(&self, g: &mut Graph, beta: Var, points: Var) -> Result<Vec<Var>> {
        self.u_decoder.eval(g, &self.store, beta, points)
    }

    /// `log p(β)`, `[B, 1]`.
    pub fn prior_log_density(&self, g: &mut Graph, beta: Var) -> Result<Var> {
        self.flow.log_density(g, &self.store, beta)
    }

    /// Latents for concrete microstructures (no gradients kept).
    pub fn encode_micro(&self, micro: &[&Microstructure]) -> Result<Tensor> {
        let mut g = Graph::frozen();
        let x = g.constant(micro_batch(micro)?);
        let b = self.encode(&mut g, x)?;
        Ok(g.value(b).clone())
    }

    /// Phase-1 probabilities on the pixel grid, `[B, k²]`.
    pub fn decode_probabilities(&self, beta: &Tensor) -> Result<Tensor> {
        let mut g = Graph::frozen();
        let b = g.constant(beta.clone());
        let p = g.constant(pixel_centers(self.config.k));
        let v = self.mu_probabilities(&mut g, b, p)?;
        Ok(g.value(v).clone())
    }

    /// Hard microstructures: probability `≥ 0.5` is phase 1.
    pub fn decode_microstructures(&self, beta: &Tensor) -> Result<Vec<Microstructure>> {
        let p = self.decode_probabilities(beta)?;
        let k = self.config.k;
        (0..p.rows())
            .map(|r| Microstructure::new(k, p.row_slice(r).iter().map(|&v| u8::from(v >= 0.5)).collect()))
            .collect()
    }

    /// Response channel values at `points`, one `[B, P]` tensor per channel.
    pub fn response_values(&self, beta: &Tensor, points: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::frozen();
        let b = g.constant(beta.clone());
        let p = g.constant(points.clone());
        let out = self.response(&mut g, b, p)?;
        Ok(out.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Write `model.json` and `weights.f64` into `dir`.
    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::with_capacity(self.store.len());
        let mut bytes = Vec::with_capacity(self.store.numel() * 8);
        for (name, t) in self.store.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: bytes.len(),
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            tensors,
            extra,
        };
        let mut f = fs::File::create(dir.join("model.json"))?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n")?;
        fs::write(dir.join("weights.f64"), bytes)?;
        Ok(())
    }

    /// Read a checkpoint written by [`Model::save`]; returns the model and
    /// the `extra` metadata.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let meta_path = dir.join("model.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(&meta_path, format!("unsupported format version {}", meta.format_version)));
        }
        let weights_path = dir.join("weights.f64");
        let bytes = fs::read(&weights_path)?;
        let mut model = Model::new(meta.config, meta.seed)?;
        if meta.tensors.len() != model.store.len() {
            return Err(Error::format(&weights_path, "tensor count does not match the architecture"));
        }
        for (id, entry) in meta.tensors.iter().enumerate() {
            if model.store.name(id) != entry.name || model.store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::format(&meta_path, format!("tensor '{}' does not match the architecture", entry.name)));
            }
            let n: usize = entry.shape.iter().product();
            let end = entry.offset + 8 * n;
            if end > bytes.len() {
                return Err(Error::format(&weights_path, "file is truncated"));
            }
            let dst = model.store.get_mut(id).data_mut();
            for (d, chunk) in dst.iter_mut().zip(bytes[entry.offset..end].chunks_exact(8)) {
                *d = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok((model, meta.extra))
    }
}
