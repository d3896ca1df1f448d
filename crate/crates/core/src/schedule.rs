//! Single-threaded execution of the block stack under both graph sources.
//!
//! Standard ViG builds block `l`'s graph from `U(l)`; GraphLeap builds it from
//! `U(l-1)`, bootstrapping with `G(U(l))` at the first block of every stage.
//! The overlapped two-worker executor in the `graphleap` crate must reproduce
//! [`run_graphleap_sequential`] bit for bit.

use alloc::vec::Vec;

use crate::config::{BlockInfo, BlockOptions, HardwareParams, Mode, ModelSpec};
use crate::fue::{ffn_block, grapher_from_projected, project_input};
use crate::gce::{build_graph, DistanceTilePlan};
use crate::stages::{add_positional, classify_head, patch_embed, stage_transition, ImageTensor};
use crate::tensor::{FeatureMatrix, GraphTopology};
use crate::weights::ModelWeights;
use crate::Result;

/// Graphs over more nodes than this are kept in traces as digests only.
pub const TRACE_RETAIN_MAX_NODES: usize = 1024;

/// Model, parameters and math options for one inference.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub spec: &'a ModelSpec,
    pub weights: &'a ModelWeights,
    pub opts: BlockOptions,
    pub p_n: usize,
    pub p_d: usize,
}

impl<'a> Engine<'a> {
    /// Checks the weights against the spec once up front.
    pub fn new(
        spec: &'a ModelSpec,
        weights: &'a ModelWeights,
        opts: BlockOptions,
        hw: &HardwareParams,
    ) -> Result<Self> {
        weights.check(spec)?;
        Ok(Engine {
            spec,
            weights,
            opts,
            p_n: hw.p_n,
            p_d: hw.p_d,
        })
    }

    /// Stem and positional offsets: the stage-0 input features.
    pub fn embed(&self, img: &ImageTensor) -> Result<FeatureMatrix> {
        let x = patch_embed(img, self.spec.patch_size, &self.weights.stem)?;
        add_positional(&x, &self.weights.positional)
    }

    /// Input projection of block `b`.
    pub fn project(&self, b: &BlockInfo, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        project_input(x, &self.weights.blocks[b.index], &self.opts)
    }

    /// Dilated kNN graph over `u` with block `b`'s `k` and dilation.
    pub fn graph(&self, b: &BlockInfo, u: &FeatureMatrix) -> Result<GraphTopology> {
        let plan = DistanceTilePlan::for_features(u, self.p_n, self.p_d)?;
        build_graph(u, b.k, b.dilation, &plan)
    }

    /// Grapher then FFN for block `b`, given its projection and graph.
    pub fn update(
        &self,
        b: &BlockInfo,
        x: &FeatureMatrix,
        u: &FeatureMatrix,
        g: &GraphTopology,
    ) -> Result<FeatureMatrix> {
        let w = &self.weights.blocks[b.index];
        let y = grapher_from_projected(x, u, g, w, &self.opts)?;
        ffn_block(&y, w, &self.opts)
    }

    /// Pool and widen after the last block of `stage`.
    pub fn transition(&self, stage: usize, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        stage_transition(x, self.spec.stages[stage].side, &self.weights.transitions[stage])
    }

    pub fn classify(&self, x: &FeatureMatrix) -> Result<Vec<f32>> {
        classify_head(x, &self.weights.head)
    }

    /// True when `b` is the last block of a stage that has a successor.
    pub fn ends_stage(&self, b: &BlockInfo) -> bool {
        let infos_in_stage: usize = self.spec.stages[..=b.stage].iter().map(|s| s.num_blocks).sum();
        b.index + 1 == infos_in_stage && b.stage + 1 < self.spec.stages.len()
    }
}

/// Per-block state carried by the leap-ahead schedule.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub layer: usize,
    pub x: FeatureMatrix,
    /// Projected features of this block, kept to build the next block's graph.
    pub u_cache: FeatureMatrix,
    pub g_hat: GraphTopology,
}

/// Which graph a block consumed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTrace {
    pub block: usize,
    /// Block whose projected features the graph was built from.
    pub source_layer: usize,
    pub digest: u64,
    /// Kept for graphs of at most [`TRACE_RETAIN_MAX_NODES`] nodes.
    pub graph: Option<GraphTopology>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub blocks: Vec<BlockTrace>,
}

impl Trace {
    pub fn record(&mut self, block: usize, source_layer: usize, g: &GraphTopology, retain_all: bool) {
        let keep = retain_all || g.nodes() <= TRACE_RETAIN_MAX_NODES;
        self.blocks.push(BlockTrace {
            block,
            source_layer,
            digest: g.digest(),
            graph: keep.then(|| g.clone()),
        });
    }

    pub fn digests(&self) -> Vec<u64> {
        self.blocks.iter().map(|b| b.digest).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logits: Vec<f32>,
    pub trace: Trace,
}

fn run_sequential(x0: &FeatureMatrix, engine: &Engine<'_>, mode: Mode, retain_all: bool) -> Result<RunOutput> {
    let mut trace = Trace::default();
    let mut x = x0.clone();
    let mut prev: Option<LayerState> = None;
    for b in engine.spec.blocks() {
        let u = engine.project(&b, &x)?;
        let (g, source) = match (mode, &prev) {
            (Mode::GraphLeap, Some(state)) if !b.stage_start => (engine.graph(&b, &state.u_cache)?, state.layer),
            _ => (engine.graph(&b, &u)?, b.index),
        };
        trace.record(b.index, source, &g, retain_all);
        let next = engine.update(&b, &x, &u, &g)?;
        prev = Some(LayerState {
            layer: b.index,
            x,
            u_cache: u,
            g_hat: g,
        });
        x = if engine.ends_stage(&b) {
            engine.transition(b.stage, &next)?
        } else {
            next
        };
    }
    Ok(RunOutput {
        logits: engine.classify(&x)?,
        trace,
    })
}

/// Every block builds its graph from its own projected features, then runs
/// Grapher and FFN on it. Strictly serialized.
pub fn run_standard(x0: &FeatureMatrix, engine: &Engine<'_>) -> Result<RunOutput> {
    run_sequential(x0, engine, Mode::StandardViG, false)
}

/// Leap-ahead graphs, executed in program order.
pub fn run_graphleap_sequential(x0: &FeatureMatrix, engine: &Engine<'_>) -> Result<RunOutput> {
    run_sequential(x0, engine, Mode::GraphLeap, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    /// Mean per-node Jaccard overlap between the standard graph and the
    /// leap-ahead graph, one entry per block.
    pub jaccard: Vec<f64>,
    pub standard_digests: Vec<u64>,
    pub graphleap_digests: Vec<u64>,
    /// L2 distance between the final logits.
    pub logit_l2: f64,
}

/// Runs both graph sources and measures how far the leap-ahead graphs drift.
pub fn compare_modes(x0: &FeatureMatrix, engine: &Engine<'_>) -> Result<DivergenceReport> {
    let std_run = run_sequential(x0, engine, Mode::StandardViG, true)?;
    let leap_run = run_sequential(x0, engine, Mode::GraphLeap, true)?;
    let mut jaccard = Vec::with_capacity(std_run.trace.blocks.len());
    for (a, b) in std_run.trace.blocks.iter().zip(&leap_run.trace.blocks) {
        let (ga, gb) = (a.graph.as_ref(), b.graph.as_ref());
        // retain_all keeps every graph
        let j = match (ga, gb) {
            (Some(ga), Some(gb)) => ga.jaccard(gb)?,
            _ => f64::NAN,
        };
        jaccard.push(j);
    }
    let logit_l2 = libm::sqrt(
        std_run
            .logits
            .iter()
            .zip(&leap_run.logits)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum(),
    );
    Ok(DivergenceReport {
        jaccard,
        standard_digests: std_run.trace.digests(),
        graphleap_digests: leap_run.trace.digests(),
        logit_l2,
    })
}
