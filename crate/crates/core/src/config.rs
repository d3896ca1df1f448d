//! Model architectures, accelerator parameters and run options.
//!
//! Everything is validated on construction; a [`ModelSpec`] that exists has
//! integral per-stage node counts and a dilation schedule that fits every
//! stage.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_NUM_CLASSES: usize = 1000;
pub const DEFAULT_IMAGE_SIZE: usize = 224;
pub const DEFAULT_MAX_HEADS: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 7] = [
    "ViG-Ti",
    "ViG-S",
    "ViG-B",
    "ViG-Py-Ti",
    "ViG-Py-S",
    "ViG-Py-M",
    "ViG-Py-B",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    Isotropic,
    Pyramidal,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Isotropic => "isotropic",
            Structure::Pyramidal => "pyramidal",
        }
    }

    /// Stem patch size used by the presets: 16x16 patches for isotropic
    /// models, a stride-4 stem for pyramids.
    pub fn default_patch_size(self) -> usize {
        match self {
            Structure::Isotropic => 16,
            Structure::Pyramidal => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageSpec {
    pub num_blocks: usize,
    pub dim: usize,
    /// Tokens at this stage, `side * side`.
    pub nodes: usize,
    /// Side length of the square token grid.
    pub side: usize,
    /// Heads used by the per-head MRConv update.
    pub heads: usize,
}

/// One block of the flattened block stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub index: usize,
    pub stage: usize,
    pub nodes: usize,
    pub dim: usize,
    pub heads: usize,
    pub k: usize,
    pub dilation: usize,
    /// First block of its stage. Leap-ahead graphs are re-bootstrapped here.
    pub stage_start: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub name: Option<String>,
    pub structure: Structure,
    pub stages: Vec<StageSpec>,
    pub patch_size: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub k: usize,
    pub max_heads: usize,
    pub dilation_schedule: Vec<usize>,
}

/// Builder-style description of a model before node counts are derived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDesc {
    pub name: Option<String>,
    pub structure: Structure,
    pub blocks: Vec<usize>,
    pub dims: Vec<usize>,
    pub patch_size: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub k: usize,
    pub max_heads: usize,
    /// `None` selects [`default_dilation_schedule`].
    pub dilation_schedule: Option<Vec<usize>>,
}

impl ModelDesc {
    pub fn build(self) -> Result<ModelSpec> {
        ModelSpec::from_desc(self)
    }
}

/// Largest divisor of `dim` that does not exceed `max_heads`.
pub fn heads_for_dim(dim: usize, max_heads: usize) -> usize {
    (1..=max_heads.max(1).min(dim.max(1)))
        .rev()
        .find(|h| dim.is_multiple_of(*h))
        .unwrap_or(1)
}

/// `d(l) = min(l / 4 + 1, N_l / k)` over the global block index, floored at 1.
pub fn default_dilation_schedule(stage_nodes: &[(usize, usize)], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut index = 0;
    for &(blocks, nodes) in stage_nodes {
        let cap = if k == 0 { 1 } else { (nodes / k).max(1) };
        for _ in 0..blocks {
            out.push((index / 4 + 1).min(cap));
            index += 1;
        }
    }
    out
}

impl ModelSpec {
    pub fn from_desc(desc: ModelDesc) -> Result<Self> {
        let ModelDesc {
            name,
            structure,
            blocks,
            dims,
            patch_size,
            image_size,
            num_classes,
            k,
            max_heads,
            dilation_schedule,
        } = desc;

        if blocks.is_empty() {
            return Err(Error::validation("model.blocks", "at least one stage is required"));
        }
        if blocks.len() != dims.len() {
            return Err(Error::validation(
                "model.dims",
                format!("{} dims given for {} stages", dims.len(), blocks.len()),
            ));
        }
        match structure {
            Structure::Isotropic if blocks.len() != 1 => {
                return Err(Error::validation(
                    "model.blocks",
                    "isotropic models have exactly one stage",
                ))
            }
            Structure::Pyramidal if blocks.len() != 4 => {
                return Err(Error::validation(
                    "model.blocks",
                    "pyramidal models have exactly four stages",
                ))
            }
            _ => {}
        }
        for (i, (&b, &d)) in blocks.iter().zip(&dims).enumerate() {
            if b == 0 {
                return Err(Error::validation(format!("model.blocks[{i}]"), "must be positive"));
            }
            if d == 0 {
                return Err(Error::validation(format!("model.dims[{i}]"), "must be positive"));
            }
        }
        if patch_size == 0 {
            return Err(Error::validation("model.patch_size", "must be positive"));
        }
        if image_size == 0 {
            return Err(Error::validation("model.image_size", "must be positive"));
        }
        if image_size % patch_size != 0 {
            return Err(Error::validation(
                "model.image_size",
                format!("{image_size} is not divisible by patch size {patch_size}"),
            ));
        }
        if num_classes == 0 {
            return Err(Error::validation("model.num_classes", "must be positive"));
        }
        if k == 0 {
            return Err(Error::validation("model.k", "must be positive"));
        }
        if max_heads == 0 {
            return Err(Error::validation("model.heads", "must be positive"));
        }

        let mut side = image_size / patch_size;
        let mut stages = Vec::with_capacity(blocks.len());
        for (i, (&num_blocks, &dim)) in blocks.iter().zip(&dims).enumerate() {
            if i > 0 {
                if side % 2 != 0 {
                    return Err(Error::validation(
                        "model.image_size",
                        format!("stage {} grid {side}x{side} cannot be halved", i - 1),
                    ));
                }
                side /= 2;
            }
            stages.push(StageSpec {
                num_blocks,
                dim,
                nodes: side * side,
                side,
                heads: heads_for_dim(dim, max_heads),
            });
        }

        let total: usize = blocks.iter().sum();
        let dilation_schedule = match dilation_schedule {
            Some(d) => d,
            None => default_dilation_schedule(
                &stages.iter().map(|s| (s.num_blocks, s.nodes)).collect::<Vec<_>>(),
                k,
            ),
        };
        if dilation_schedule.len() != total {
            return Err(Error::validation(
                "model.dilation",
                format!("{} entries for {total} blocks", dilation_schedule.len()),
            ));
        }

        let spec = ModelSpec {
            name,
            structure,
            stages,
            patch_size,
            image_size,
            num_classes,
            k,
            max_heads,
            dilation_schedule,
        };
        for b in spec.blocks() {
            if b.dilation == 0 {
                return Err(Error::validation(
                    format!("model.dilation[{}]", b.index),
                    "must be positive",
                ));
            }
            if spec.k > b.nodes {
                return Err(Error::validation(
                    "model.k",
                    format!("k exceeds N: k={} but stage {} has N={}", spec.k, b.stage, b.nodes),
                ));
            }
            if spec.k * b.dilation > b.nodes {
                return Err(Error::validation(
                    format!("model.dilation[{}]", b.index),
                    format!(
                        "k*d = {} exceeds N={} at block {}",
                        spec.k * b.dilation,
                        b.nodes,
                        b.index
                    ),
                ));
            }
        }
        Ok(spec)
    }

    /// Back to the builder form, with the schedule made explicit.
    pub fn to_desc(&self) -> ModelDesc {
        ModelDesc {
            name: self.name.clone(),
            structure: self.structure,
            blocks: self.stages.iter().map(|s| s.num_blocks).collect(),
            dims: self.stages.iter().map(|s| s.dim).collect(),
            patch_size: self.patch_size,
            image_size: self.image_size,
            num_classes: self.num_classes,
            k: self.k,
            max_heads: self.max_heads,
            dilation_schedule: Some(self.dilation_schedule.clone()),
        }
    }

    /// Same architecture at another input resolution. The dilation schedule
    /// is recomputed from the defaults.
    pub fn with_image_size(&self, image_size: usize) -> Result<Self> {
        let mut desc = self.to_desc();
        desc.image_size = image_size;
        desc.dilation_schedule = None;
        desc.build()
    }

    /// Resolution and neighbor count changed together, for reduced-size
    /// variants whose last stage has fewer than the default `k` nodes.
    pub fn resized(&self, image_size: usize, k: usize) -> Result<Self> {
        let mut desc = self.to_desc();
        desc.image_size = image_size;
        desc.k = k;
        desc.dilation_schedule = None;
        desc.build()
    }

    /// Same architecture with another neighbor count and the default schedule.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        let mut desc = self.to_desc();
        desc.k = k;
        desc.dilation_schedule = None;
        desc.build()
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.num_blocks).sum()
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        let mut out = Vec::with_capacity(self.total_blocks());
        for (stage, s) in self.stages.iter().enumerate() {
            for b in 0..s.num_blocks {
                let index = out.len();
                out.push(BlockInfo {
                    index,
                    stage,
                    nodes: s.nodes,
                    dim: s.dim,
                    heads: s.heads,
                    k: self.k,
                    dilation: self.dilation_schedule.get(index).copied().unwrap_or(1),
                    stage_start: b == 0,
                });
            }
        }
        out
    }

    /// Flattened pixels per stem patch.
    pub fn patch_pixels(&self) -> usize {
        IMAGE_CHANNELS * self.patch_size * self.patch_size
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("custom")
    }
}

/// Model spec for one of the named architectures at 224x224, k = 9 and 1000
/// classes.
pub fn preset(name: &str) -> Result<ModelSpec> {
    let (structure, blocks, dims): (Structure, &[usize], &[usize]) = match name {
        "ViG-Ti" => (Structure::Isotropic, &[12], &[192]),
        "ViG-S" => (Structure::Isotropic, &[12], &[320]),
        "ViG-B" => (Structure::Isotropic, &[16], &[640]),
        "ViG-Py-Ti" => (Structure::Pyramidal, &[2, 2, 6, 2], &[48, 96, 240, 384]),
        "ViG-Py-S" => (Structure::Pyramidal, &[2, 2, 6, 2], &[80, 160, 400, 640]),
        "ViG-Py-M" => (Structure::Pyramidal, &[2, 2, 16, 2], &[80, 160, 400, 640]),
        "ViG-Py-B" => (Structure::Pyramidal, &[2, 2, 18, 2], &[96, 192, 480, 768]),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    ModelDesc {
        name: Some(name.to_string()),
        structure,
        blocks: blocks.to_vec(),
        dims: dims.to_vec(),
        patch_size: structure.default_patch_size(),
        image_size: DEFAULT_IMAGE_SIZE,
        num_classes: DEFAULT_NUM_CLASSES,
        k: DEFAULT_K,
        max_heads: DEFAULT_MAX_HEADS,
        dilation_schedule: None,
    }
    .build()
}

/// Accelerator parameters of the cost model. Defaults: 32x32 PEs, 16 heads,
/// 14-cycle fused pipeline, 300 MHz, two look-ahead buffers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareParams {
    pub p_n: usize,
    pub p_d: usize,
    pub heads: usize,
    pub l_fused: u64,
    pub f_clk: f64,
    pub n_buf: usize,
    pub c1: f64,
    pub c2: f64,
    pub t_sync: u64,
    pub t_pcie: f64,
}

impl Default for HardwareParams {
    fn default() -> Self {
        HardwareParams {
            p_n: 32,
            p_d: 32,
            heads: 16,
            l_fused: 14,
            f_clk: 3.0e8,
            n_buf: 2,
            c1: 1.0,
            c2: 1.0,
            t_sync: 0,
            t_pcie: 0.0,
        }
    }
}

impl HardwareParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hardware.p_n", self.p_n),
            ("hardware.p_d", self.p_d),
            ("hardware.heads", self.heads),
            ("hardware.n_buf", self.n_buf),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::validation(path, "must be positive"));
            }
        }
        if !(self.f_clk.is_finite() && self.f_clk > 0.0) {
            return Err(Error::validation("hardware.f_clk", "must be a positive frequency"));
        }
        for (path, v) in [("hardware.c1", self.c1), ("hardware.c2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(path, "must be finite and non-negative"));
            }
        }
        if !(self.t_pcie.is_finite() && self.t_pcie >= 0.0) {
            return Err(Error::validation("hardware.t_pcie", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Graph of block l built from block l's own projected features.
    StandardViG,
    /// Graph of block l built from block l-1's projected features.
    GraphLeap,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StandardViG => "standard",
            Mode::GraphLeap => "graphleap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    Sequential,
    Overlapped,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Sequential => "sequential",
            Schedule::Overlapped => "overlapped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum WeightSource {
    RandomSeeded,
    File(String),
}

/// Nonlinearity used by Grapher and FFN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    GeluPwl,
    GeluExact,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::GeluPwl => "gelu-pwl",
            Activation::GeluExact => "gelu-exact",
            Activation::Relu => "relu",
        }
    }
}

/// Per-block math options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockOptions {
    pub activation: Activation,
    /// Pre-norm before the input projection and before the FFN.
    pub layer_norm: bool,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            activation: Activation::GeluPwl,
            layer_norm: true,
        }
    }
}

impl BlockOptions {
    /// The bare block equations: no normalization.
    pub fn plain(activation: Activation) -> Self {
        BlockOptions {
            activation,
            layer_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub schedule: Schedule,
    pub seed: u64,
    pub weight_source: WeightSource,
    pub numeric_tolerance: f32,
    pub block: BlockOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::GraphLeap,
            schedule: Schedule::Overlapped,
            seed: 0,
            weight_source: WeightSource::RandomSeeded,
            numeric_tolerance: 1e-5,
            block: BlockOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::StandardViG && self.schedule == Schedule::Overlapped {
            return Err(Error::validation(
                "run.schedule",
                "overlapped schedule requires mode = graphleap; standard ViG serializes every layer",
            ));
        }
        if !(self.numeric_tolerance.is_finite() && self.numeric_tolerance >= 0.0) {
            return Err(Error::validation("run.tolerance", "must be finite and non-negative"));
        }
        if let WeightSource::File(p) = &self.weight_source {
            if p.is_empty() {
                return Err(Error::validation("run.weights", "empty path"));
            }
        }
        Ok(())
    }
}
