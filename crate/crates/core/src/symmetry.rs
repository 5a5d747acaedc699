//! Square symmetries that map a labeled sample to another exact sample.
//!
//! A symmetry acts on a row-major `n × n` image (row = y) as a transpose,
//! then an x-flip, then a y-flip. Labels transform with it: a transpose
//! swaps the horizontal and vertical loadings and their flux components, a
//! flip across the loading axis maps `T` to `1 − T`, and a flip negates the
//! flux component normal to its mirror line.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::microgen::Microstructure;
use crate::task::Task;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symmetry {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

/// Output channel `c` reads `offset + sign · input[src]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct ChannelMap {
    src: usize,
    sign: f64,
    offset: f64,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        transpose: false,
        flip_x: false,
        flip_y: false,
    };

    /// Symmetries that keep the boundary conditions of `task` invariant.
    /// The field-recovery loading (right edge hot) only allows a y-flip.
    pub fn group(task: Task) -> Vec<Symmetry> {
        match task {
            Task::Property => (0..8)
                .map(|b| Symmetry {
                    transpose: b & 4 != 0,
                    flip_x: b & 2 != 0,
                    flip_y: b & 1 != 0,
                })
                .collect(),
            Task::Field => vec![
                Symmetry::IDENTITY,
                Symmetry {
                    flip_y: true,
                    ..Symmetry::IDENTITY
                },
            ],
        }
    }

    pub fn sample<R: Rng>(task: Task, rng: &mut R) -> Symmetry {
        let g = Symmetry::group(task);
        g[rng.random_range(0..g.len())]
    }

    /// Source cell of output cell `cell` on an `n × n` grid.
    pub fn source_cell(&self, n: usize, cell: usize) -> usize {
        let (mut r, mut c) = (cell / n, cell % n);
        if self.flip_y {
            r = n - 1 - r;
        }
        if self.flip_x {
            c = n - 1 - c;
        }
        if self.transpose {
            (r, c) = (c, r);
        }
        r * n + c
    }

    pub fn apply_micro(&self, m: &Microstructure) -> Result<Microstructure> {
        let k = m.k();
        let ph = m.phase();
        Microstructure::new(k, (0..k * k).map(|p| ph[self.source_cell(k, p)]).collect())
    }

    fn channel_maps(&self, task: Task) -> Vec<ChannelMap> {
        let ident = |c| ChannelMap {
            src: c,
            sign: 1.0,
            offset: 0.0,
        };
        let mut maps: Vec<ChannelMap> = (0..task.channels()).map(ident).collect();
        if task == Task::Field {
            // T only; a y-flip leaves the field-recovery data unchanged.
            return maps;
        }
        // Steps as (src, sign, offset) per output channel, channels
        // [T_h, qx_h, qy_h, T_v, qx_v, qy_v]; composed in application order.
        let step = |spec: [(usize, f64, f64); 6]| spec.map(|(src, sign, offset)| ChannelMap { src, sign, offset });
        let mut steps = Vec::new();
        if self.transpose {
            steps.push(step([(3, 1.0, 0.0), (5, 1.0, 0.0), (4, 1.0, 0.0), (0, 1.0, 0.0), (2, 1.0, 0.0), (1, 1.0, 0.0)]));
        }
        if self.flip_x {
            steps.push(step([(0, -1.0, 1.0), (1, 1.0, 0.0), (2, -1.0, 0.0), (3, 1.0, 0.0), (4, -1.0, 0.0), (5, 1.0, 0.0)]));
        }
        if self.flip_y {
            steps.push(step([(0, 1.0, 0.0), (1, 1.0, 0.0), (2, -1.0, 0.0), (3, -1.0, 1.0), (4, -1.0, 0.0), (5, 1.0, 0.0)]));
        }
        for s in steps {
            maps = s
                .iter()
                .map(|e| {
                    let m = maps[e.src];
                    ChannelMap {
                        src: m.src,
                        sign: e.sign * m.sign,
                        offset: e.offset + e.sign * m.offset,
                    }
                })
                .collect();
        }
        maps
    }

    /// Transform one sample's labels (`channels × grid²`, channel-major).
    pub fn apply_labels(&self, task: Task, grid: usize, fields: &[f32]) -> Vec<f64> {
        let gg = grid * grid;
        let maps = self.channel_maps(task);
        let mut out = Vec::with_capacity(maps.len() * gg);
        for m in &maps {
            out.extend((0..gg).map(|cell| m.offset + m.sign * fields[m.src * gg + self.source_cell(grid, cell)] as f64));
        }
        out
    }
}
