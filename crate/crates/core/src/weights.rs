//! Learned parameters and their deterministic initialization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::config::{BlockInfo, ModelSpec};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// LayerNorm gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl NormParams {
    pub fn identity(dim: usize) -> Self {
        NormParams {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// Inference-mode BatchNorm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    pub const DEFAULT_EPS: f32 = 1e-5;

    /// Unit statistics with `eps = 0`, an exact pass-through.
    pub fn identity(dim: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            eps: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// All parameters of one Grapher + FFN block.
///
/// `w_x` and `w_m` hold the `H` diagonal `(D/H) x (D/H)` blocks of the
/// aggregation weights; the off-diagonal blocks are zero and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub dim: usize,
    pub heads: usize,
    pub w_in: Matrix,
    pub w_x: Vec<Matrix>,
    pub w_m: Vec<Matrix>,
    pub w_out: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub norm1: NormParams,
    pub norm2: NormParams,
}

impl BlockWeights {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        let dh = dim / heads;
        BlockWeights {
            dim,
            heads,
            w_in: Matrix::zeros(dim, dim),
            w_x: vec![Matrix::zeros(dh, dh); heads],
            w_m: vec![Matrix::zeros(dh, dh); heads],
            w_out: Matrix::zeros(dim, dim),
            w1: Matrix::zeros(dim, 4 * dim),
            w2: Matrix::zeros(4 * dim, dim),
            norm1: NormParams::identity(dim),
            norm2: NormParams::identity(dim),
        }
    }

    /// `W_in = I`, every other projection zero. Features pass through the
    /// block unchanged, so every layer sees the same projected features.
    pub fn frozen(dim: usize, heads: usize) -> Self {
        BlockWeights {
            w_in: Matrix::identity(dim),
            ..BlockWeights::zeros(dim, heads)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dim;
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::ShapeMismatch(format!(
                "D={d} is not divisible by H={}",
                self.heads
            )));
        }
        let dh = d / self.heads;
        let expect = |name: &str, m: &Matrix, shape: (usize, usize)| {
            if m.shape() == shape {
                Ok(())
            } else {
                Err(Error::ShapeMismatch(format!(
                    "{name} is {:?}, expected {shape:?}",
                    m.shape()
                )))
            }
        };
        expect("w_in", &self.w_in, (d, d))?;
        expect("w_out", &self.w_out, (d, d))?;
        expect("w1", &self.w1, (d, 4 * d))?;
        expect("w2", &self.w2, (4 * d, d))?;
        if self.w_x.len() != self.heads || self.w_m.len() != self.heads {
            return Err(Error::ShapeMismatch(format!(
                "expected {} head blocks, got {} / {}",
                self.heads,
                self.w_x.len(),
                self.w_m.len()
            )));
        }
        for (h, (x, m)) in self.w_x.iter().zip(&self.w_m).enumerate() {
            expect(&format!("w_x[{h}]"), x, (dh, dh))?;
            expect(&format!("w_m[{h}]"), m, (dh, dh))?;
        }
        for (name, n) in [("norm1", &self.norm1), ("norm2", &self.norm2)] {
            if n.gain.len() != d || n.bias.len() != d {
                return Err(Error::ShapeMismatch(format!("{name} must have length {d}")));
            }
        }
        Ok(())
    }

    /// Dense `D x D` matrix with the head blocks on its diagonal.
    pub fn block_diagonal(blocks: &[Matrix]) -> Matrix {
        let dh = blocks.first().map_or(0, Matrix::rows);
        let d = dh * blocks.len();
        let mut out = Matrix::zeros(d, d);
        for (h, b) in blocks.iter().enumerate() {
            for r in 0..dh {
                for c in 0..dh {
                    out.set(h * dh + r, h * dh + c, b.get(r, c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemWeights {
    /// `patch_pixels x D0` strided patch projection.
    pub proj: Matrix,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub stem: StemWeights,
    /// `N0 x D0` positional offsets.
    pub positional: Matrix,
    pub blocks: Vec<BlockWeights>,
    /// Channel projections between consecutive pyramid stages.
    pub transitions: Vec<Matrix>,
    /// `D_last x num_classes` classifier.
    pub head: Matrix,
}

impl ModelWeights {
    /// Checks every tensor against the architecture.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let d0 = spec.stages[0].dim;
        let n0 = spec.stages[0].nodes;
        let last = spec.stages[spec.stages.len() - 1].dim;
        let mismatch = |what: &str, got: (usize, usize), want: (usize, usize)| {
            Error::ShapeMismatch(format!("{what} is {got:?}, expected {want:?}"))
        };
        if self.stem.proj.shape() != (spec.patch_pixels(), d0) {
            return Err(mismatch("stem.proj", self.stem.proj.shape(), (spec.patch_pixels(), d0)));
        }
        let bn = &self.stem.bn;
        if [bn.gamma.len(), bn.beta.len(), bn.mean.len(), bn.var.len()]
            .iter()
            .any(|&l| l != d0)
        {
            return Err(Error::ShapeMismatch(format!("stem.bn vectors must have length {d0}")));
        }
        if self.positional.shape() != (n0, d0) {
            return Err(mismatch("positional", self.positional.shape(), (n0, d0)));
        }
        let infos = spec.blocks();
        if self.blocks.len() != infos.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks of weights for a {}-block model",
                self.blocks.len(),
                infos.len()
            )));
        }
        for (w, info) in self.blocks.iter().zip(&infos) {
            if w.dim != info.dim || w.heads != info.heads {
                return Err(Error::ShapeMismatch(format!(
                    "block {} weights are D={} H={}, expected D={} H={}",
                    info.index, w.dim, w.heads, info.dim, info.heads
                )));
            }
            w.check_shapes()?;
        }
        if self.transitions.len() != spec.stages.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} stage transitions for {} stages",
                self.transitions.len(),
                spec.stages.len()
            )));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let want = (spec.stages[i].dim, spec.stages[i + 1].dim);
            if t.shape() != want {
                return Err(mismatch("transition", t.shape(), want));
            }
        }
        if self.head.shape() != (last, spec.num_classes) {
            return Err(mismatch("head", self.head.shape(), (last, spec.num_classes)));
        }
        Ok(())
    }

    /// Frozen blocks (see [`BlockWeights::frozen`]) around otherwise seeded
    /// stem, transitions and head.
    pub fn frozen(spec: &ModelSpec, seed: u64) -> Self {
        let mut w = init_weights(spec, seed);
        for (b, info) in w.blocks.iter_mut().zip(spec.blocks()) {
            *b = BlockWeights::frozen(info.dim, info.heads);
        }
        w
    }
}

/// Uniform draws in `[-scale, scale)` from a ChaCha8 stream.
///
/// The conversion uses the top 24 bits of each `u32`, so the sequence is fixed
/// by the seed alone and does not depend on any distribution implementation.
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        UniformStream { rng }
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_unit(&mut self) -> f32 {
        (self.rng.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0)
    }

    #[inline]
    pub fn next_symmetric(&mut self, scale: f32) -> f32 {
        (2.0 * self.next_unit() - 1.0) * scale
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, scale: f32) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.next_symmetric(scale))
    }

    pub fn unit_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.next_unit())
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((u64::from(self.rng.next_u32()) * n as u64) >> 32) as usize
    }
}

/// Stream id for weight draws; other consumers of a seed use other streams.
pub const WEIGHT_STREAM: u64 = 0;
pub const INPUT_STREAM: u64 = 1;

fn scale_for(dim: usize) -> f32 {
    1.0 / libm::sqrtf(dim as f32)
}

fn init_block(rng: &mut UniformStream, info: &BlockInfo) -> BlockWeights {
    let d = info.dim;
    let dh = d / info.heads;
    let s = scale_for(d);
    BlockWeights {
        dim: d,
        heads: info.heads,
        w_in: rng.matrix(d, d, s),
        w_x: (0..info.heads).map(|_| rng.matrix(dh, dh, s)).collect(),
        w_m: (0..info.heads).map(|_| rng.matrix(dh, dh, s)).collect(),
        w_out: rng.matrix(d, d, s),
        w1: rng.matrix(d, 4 * d, s),
        w2: rng.matrix(4 * d, d, s),
        norm1: NormParams::identity(d),
        norm2: NormParams::identity(d),
    }
}

/// Seeded parameters for the whole model.
///
/// Every matrix of a stage with width `D` is uniform in `[-1/sqrt(D),
/// 1/sqrt(D))`; norms start at unit gain and zero bias. The draw order is
/// stem, positional table, blocks in order (`w_in`, `w_x` heads, `w_m` heads,
/// `w_out`, `w1`, `w2`), transitions, head.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> ModelWeights {
    let mut rng = UniformStream::new(seed, WEIGHT_STREAM);
    let d0 = spec.stages[0].dim;
    let stem = StemWeights {
        proj: rng.matrix(spec.patch_pixels(), d0, scale_for(d0)),
        bn: BatchNormParams {
            eps: BatchNormParams::DEFAULT_EPS,
            ..BatchNormParams::identity(d0)
        },
    };
    let positional = rng.matrix(spec.stages[0].nodes, d0, scale_for(d0));
    let blocks = spec.blocks().iter().map(|b| init_block(&mut rng, b)).collect();
    let transitions = spec
        .stages
        .windows(2)
        .map(|w| rng.matrix(w[0].dim, w[1].dim, scale_for(w[0].dim)))
        .collect();
    let last = spec.stages[spec.stages.len() - 1].dim;
    let head = rng.matrix(last, spec.num_classes, scale_for(last));
    ModelWeights {
        stem,
        positional,
        blocks,
        transitions,
        head,
    }
}
