//! Analytical cycle and resource model of the two-engine accelerator, plus a
//! discrete-event simulator of the GCE/FUE pipeline.
//!
//! All fractional terms of the cost formulas are rounded up to whole tiles.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::config::{HardwareParams, ModelSpec, Schedule};
use crate::{Error, Result};

#[inline]
fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// `ceil(N/p_N)^2 * ceil(D/p_D) + ceil(N*k/p_N)`: distance tiles plus
/// top-k streaming.
pub fn gce_cycles(n: usize, d: usize, k: usize, hw: &HardwareParams) -> u64 {
    let (n, d, k) = (n as u64, d as u64, k as u64);
    let (pn, pd) = (hw.p_n as u64, hw.p_d as u64);
    let rows = ceil_div(n, pn);
    rows * rows * ceil_div(d, pd) + ceil_div(n * k, pn)
}

/// `3 * ceil(N/p_N) * ceil(D/p_D) * D + ceil(N/p_N) * ceil(k/H) * ceil(D/p_D)
/// + L_fused`: three D x D projections plus the per-head aggregation.
pub fn grapher_cycles(n: usize, d: usize, k: usize, hw: &HardwareParams) -> u64 {
    let (n, d, k) = (n as u64, d as u64, k as u64);
    let (pn, pd, h) = (hw.p_n as u64, hw.p_d as u64, hw.heads as u64);
    let rows = ceil_div(n, pn);
    let tiles = ceil_div(d, pd);
    3 * (rows * tiles * d) + rows * ceil_div(k, h) * tiles + hw.l_fused
}

/// `ceil(8 N D^2 / (p_N p_D)) + L_fused`.
pub fn ffn_cycles(n: usize, d: usize, hw: &HardwareParams) -> u64 {
    let (n, d) = (n as u64, d as u64);
    ceil_div(8 * n * d * d, (hw.p_n * hw.p_d) as u64) + hw.l_fused
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub t_gce: u64,
    pub t_grapher: u64,
    pub t_ffn: u64,
    pub t_fue: u64,
    pub t_sync: u64,
}

pub fn layer_cost(n: usize, d: usize, k: usize, hw: &HardwareParams) -> LayerCost {
    let t_grapher = grapher_cycles(n, d, k, hw);
    let t_ffn = ffn_cycles(n, d, hw);
    LayerCost {
        t_gce: gce_cycles(n, d, k, hw),
        t_grapher,
        t_ffn,
        t_fue: t_grapher + t_ffn,
        t_sync: hw.t_sync,
    }
}

/// Cost of one block plus whether it opens a stage (and so has to wait for
/// the previous stage to finish before its graph can be built).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCost {
    pub cost: LayerCost,
    pub stage_start: bool,
}

pub fn block_costs(spec: &ModelSpec, hw: &HardwareParams) -> Vec<BlockCost> {
    spec.blocks()
        .iter()
        .map(|b| BlockCost {
            cost: layer_cost(b.nodes, b.dim, b.k, hw),
            stage_start: b.stage_start,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUnit {
    Cycles,
    Nanoseconds,
}

/// Start and end of both engines' work on one block.
///
/// `gce_*` is the construction of the graph that block consumes.
/// `gce_stall` is time a finished graph waited for a free buffer slot;
/// `fue_stall` is time the FUE sat idle waiting for its graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerTiming {
    pub layer: usize,
    pub stage_start: bool,
    pub gce_start: u64,
    pub gce_end: u64,
    pub fue_start: u64,
    pub fue_end: u64,
    pub gce_stall: u64,
    pub fue_stall: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTimeline {
    pub unit: TimeUnit,
    pub layers: Vec<LayerTiming>,
    pub total: u64,
    pub total_seconds: f64,
}

impl PipelineTimeline {
    pub fn total_ms(&self) -> f64 {
        self.total_seconds * 1e3
    }

    pub fn gce_stall_total(&self) -> u64 {
        self.layers.iter().map(|l| l.gce_stall).sum()
    }

    pub fn fue_stall_total(&self) -> u64 {
        self.layers.iter().map(|l| l.fue_stall).sum()
    }

    /// Precedence rules that every valid GCE/FUE schedule obeys:
    /// a block's update starts after its graph exists and after the previous
    /// update ended; graphs are built in order; a leap-ahead graph is not
    /// started before the features it is built from exist; a stage's first
    /// graph waits for the previous stage to finish.
    pub fn ordering_violations(&self) -> Vec<(usize, &'static str)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.gce_end < l.gce_start || l.fue_end < l.fue_start {
                out.push((i, "interval ends before it starts"));
            }
            if l.fue_start < l.gce_end {
                out.push((i, "update started before its graph was built"));
            }
            if i == 0 {
                continue;
            }
            let prev = &self.layers[i - 1];
            if l.fue_start < prev.fue_end {
                out.push((i, "update overlaps the previous update"));
            }
            if l.gce_start < prev.gce_end {
                out.push((i, "graph construction out of order"));
            }
            if l.stage_start {
                if l.gce_start < prev.fue_end {
                    out.push((i, "stage graph built before the stage input existed"));
                }
            } else if i >= 2 && !prev.stage_start && l.gce_start < self.layers[i - 2].fue_end {
                out.push((i, "leap-ahead graph built before its source features existed"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    GceReady(usize),
    GceDone(usize),
    FueStart(usize),
    FueDone(usize),
}

struct Simulator<'a> {
    costs: &'a [BlockCost],
    n_buf: usize,
    overlapped: bool,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    layers: Vec<LayerTiming>,
    gce_ready: Vec<bool>,
    next_gce: usize,
    gce_busy: bool,
    gce_blocked: Option<(usize, u64)>,
    buffer: VecDeque<usize>,
    next_fue: usize,
    fue_busy: bool,
    fue_pending: bool,
    /// Earliest time the FUE chain allows the next update, before sync.
    fue_free_at: u64,
}

impl<'a> Simulator<'a> {
    fn new(costs: &'a [BlockCost], n_buf: usize, schedule: Schedule) -> Self {
        Simulator {
            costs,
            n_buf: n_buf.max(1),
            overlapped: schedule == Schedule::Overlapped,
            queue: BinaryHeap::new(),
            seq: 0,
            layers: costs
                .iter()
                .enumerate()
                .map(|(layer, c)| LayerTiming {
                    layer,
                    stage_start: c.stage_start || layer == 0,
                    ..LayerTiming::default()
                })
                .collect(),
            gce_ready: vec![false; costs.len()],
            next_gce: 0,
            gce_busy: false,
            gce_blocked: None,
            buffer: VecDeque::new(),
            next_fue: 0,
            fue_busy: false,
            fue_pending: false,
            fue_free_at: 0,
        }
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, ev)));
    }

    /// Graphs held in the look-ahead buffer, including the one the FUE is
    /// currently streaming.
    fn occupancy(&self) -> usize {
        self.buffer.len()
    }

    fn try_start_gce(&mut self, now: u64) {
        let l = self.next_gce;
        if self.gce_busy || self.gce_blocked.is_some() || l >= self.costs.len() || !self.gce_ready[l] {
            return;
        }
        self.gce_busy = true;
        self.layers[l].gce_start = now;
        self.schedule(now + self.costs[l].cost.t_gce, Event::GceDone(l));
    }

    fn deliver(&mut self, l: usize, now: u64) {
        self.buffer.push_back(l);
        self.layers[l].gce_end = now;
        self.gce_busy = false;
        self.next_gce = l + 1;
        self.try_start_gce(now);
        self.check_fue(now);
    }

    fn check_fue(&mut self, now: u64) {
        let l = self.next_fue;
        if self.fue_busy || self.fue_pending || self.buffer.front() != Some(&l) {
            return;
        }
        let chained = self.overlapped && l > 0 && !self.layers[l].stage_start;
        let start = if chained {
            now.max(self.fue_free_at) + self.costs[l - 1].cost.t_sync
        } else {
            now.max(self.fue_free_at)
        };
        self.fue_pending = true;
        self.schedule(start, Event::FueStart(l));
    }

    fn handle(&mut self, now: u64, ev: Event) {
        match ev {
            Event::GceReady(l) => {
                self.gce_ready[l] = true;
                self.try_start_gce(now);
            }
            Event::GceDone(l) => {
                if self.occupancy() < self.n_buf {
                    self.deliver(l, now);
                } else {
                    self.gce_blocked = Some((l, now));
                }
            }
            Event::FueStart(l) => {
                self.fue_pending = false;
                self.fue_busy = true;
                let timing = &mut self.layers[l];
                timing.fue_start = now;
                if l > 0 {
                    let earliest = self.fue_free_at
                        + if self.overlapped && !timing.stage_start {
                            self.costs[l - 1].cost.t_sync
                        } else {
                            0
                        };
                    timing.fue_stall = now.saturating_sub(earliest);
                }
                if self.overlapped && l + 1 < self.costs.len() && !self.layers[l + 1].stage_start {
                    // U of this block exists once its update begins
                    self.schedule(now, Event::GceReady(l + 1));
                }
                self.schedule(now + self.costs[l].cost.t_fue, Event::FueDone(l));
            }
            Event::FueDone(l) => {
                self.fue_busy = false;
                self.layers[l].fue_end = now;
                self.buffer.pop_front();
                self.next_fue = l + 1;
                self.fue_free_at = now;
                if let Some((blocked, since)) = self.gce_blocked.take() {
                    self.layers[blocked].gce_stall = now - since;
                    self.deliver(blocked, now);
                }
                let next = l + 1;
                if next < self.costs.len() && (!self.overlapped || self.layers[next].stage_start) {
                    self.schedule(now + self.costs[l].cost.t_sync, Event::GceReady(next));
                }
                self.check_fue(now);
            }
        }
    }

    fn run(mut self) -> (Vec<LayerTiming>, u64) {
        if self.costs.is_empty() {
            return (Vec::new(), 0);
        }
        self.schedule(0, Event::GceReady(0));
        while let Some(Reverse((now, _, ev))) = self.queue.pop() {
            self.handle(now, ev);
        }
        let last = self.costs.len() - 1;
        let total = self.layers[last].fue_end + self.costs[last].cost.t_sync;
        (self.layers, total)
    }
}

/// Event-driven simulation of the block stack.
///
/// Sequential: each block builds its graph after the previous block (plus
/// sync) and updates after its graph. Overlapped: the graph of block `l + 1`
/// is built while block `l` updates, through a look-ahead buffer of `n_buf`
/// graphs whose slot is held until the consuming update finishes; a stage's
/// first graph waits for the previous stage.
pub fn simulate(costs: &[BlockCost], n_buf: usize, schedule: Schedule, f_clk: f64) -> PipelineTimeline {
    let (layers, total) = Simulator::new(costs, n_buf, schedule).run();
    PipelineTimeline {
        unit: TimeUnit::Cycles,
        layers,
        total,
        total_seconds: total as f64 / f_clk,
    }
}

/// Closed form of [`simulate`]'s total. Per stage, sequential is
/// `sum(t_gce + t_fue + t_sync)`; overlapped is
/// `t_gce(first) + sum_{l < last} max(t_gce(l+1), t_fue(l)) + t_fue(last) + sum(t_sync)`.
pub fn closed_form_total(costs: &[BlockCost], schedule: Schedule) -> u64 {
    match schedule {
        Schedule::Sequential => costs
            .iter()
            .map(|b| b.cost.t_gce + b.cost.t_fue + b.cost.t_sync)
            .sum(),
        Schedule::Overlapped => {
            let mut total = 0;
            let mut start = 0;
            while start < costs.len() {
                let mut end = start + 1;
                while end < costs.len() && !costs[end].stage_start {
                    end += 1;
                }
                let stage = &costs[start..end];
                total += stage[0].cost.t_gce;
                for w in stage.windows(2) {
                    total += w[1].cost.t_gce.max(w[0].cost.t_fue);
                }
                total += stage[stage.len() - 1].cost.t_fue;
                total += stage.iter().map(|b| b.cost.t_sync).sum::<u64>();
                start = end;
            }
            total
        }
    }
}

/// Predicted timeline for the whole model. The host transfer constant is
/// added once to the reported seconds.
pub fn total_latency(spec: &ModelSpec, hw: &HardwareParams, schedule: Schedule) -> PipelineTimeline {
    let mut t = simulate(&block_costs(spec, hw), hw.n_buf, schedule, hw.f_clk);
    t.total_seconds += hw.t_pcie;
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyPrediction {
    pub sequential: PipelineTimeline,
    pub overlapped: PipelineTimeline,
}

impl LatencyPrediction {
    pub fn speedup(&self) -> f64 {
        self.sequential.total_seconds / self.overlapped.total_seconds
    }
}

pub fn predict(spec: &ModelSpec, hw: &HardwareParams) -> LatencyPrediction {
    LatencyPrediction {
        sequential: total_latency(spec, hw, Schedule::Sequential),
        overlapped: total_latency(spec, hw, Schedule::Overlapped),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceEstimate {
    pub dsp: u64,
    pub lut: u64,
    pub bytes_onchip: u64,
}

/// `dsp = c1 * p_N * p_D`, `lut = c2 * p_N * p_D`, and on-chip bytes for two
/// f32 feature buffers plus u32 edge indices at the largest stage.
pub fn resource_estimate(spec: &ModelSpec, hw: &HardwareParams) -> ResourceEstimate {
    let omega = (hw.p_n * hw.p_d) as f64;
    let bytes_onchip = spec
        .stages
        .iter()
        .map(|s| {
            let (n, d, k) = (s.nodes as u64, s.dim as u64, spec.k as u64);
            4 * (2 * n * d) + 4 * (n * k)
        })
        .max()
        .unwrap_or(0);
    ResourceEstimate {
        dsp: libm::ceil(hw.c1 * omega) as u64,
        lut: libm::ceil(hw.c2 * omega) as u64,
        bytes_onchip,
    }
}

/// One block of a [`measured_vs_model`] comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentRow {
    pub layer: usize,
    /// FUE idle time over FUE busy time.
    pub measured_stall_ratio: f64,
    pub model_stall_ratio: f64,
    /// Whether the next graph was ready before this block's update ended.
    pub measured_hidden: bool,
    pub model_hidden: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub measured_violations: Vec<(usize, &'static str)>,
    pub model_violations: Vec<(usize, &'static str)>,
    pub measured_fue_stall: u64,
    pub model_fue_stall: u64,
    pub measured_gce_stall: u64,
    pub model_gce_stall: u64,
}

impl AlignmentReport {
    pub fn violation_count(&self) -> usize {
        self.measured_violations.len() + self.model_violations.len()
    }
}

fn stall_ratio(l: &LayerTiming) -> f64 {
    let busy = l.fue_end.saturating_sub(l.fue_start);
    if busy == 0 {
        0.0
    } else {
        l.fue_stall as f64 / busy as f64
    }
}

/// Lines up a functional run's timeline with the model's and checks both
/// against the shared precedence rules. Measurement only.
pub fn measured_vs_model(measured: &PipelineTimeline, model: &PipelineTimeline) -> Result<AlignmentReport> {
    if measured.layers.len() != model.layers.len() {
        return Err(Error::SpecMismatch(format!(
            "{} measured blocks vs {} modeled",
            measured.layers.len(),
            model.layers.len()
        )));
    }
    if let Some((i, _)) = measured
        .layers
        .iter()
        .zip(&model.layers)
        .enumerate()
        .find(|(_, (a, b))| a.stage_start != b.stage_start)
    {
        return Err(Error::SpecMismatch(format!("stage boundary differs at block {i}")));
    }
    let hidden = |t: &PipelineTimeline, i: usize| {
        t.layers
            .get(i + 1)
            .is_none_or(|next| next.stage_start || next.gce_end <= t.layers[i].fue_end)
    };
    let rows = (0..model.layers.len())
        .map(|i| AlignmentRow {
            layer: i,
            measured_stall_ratio: stall_ratio(&measured.layers[i]),
            model_stall_ratio: stall_ratio(&model.layers[i]),
            measured_hidden: hidden(measured, i),
            model_hidden: hidden(model, i),
        })
        .collect();
    Ok(AlignmentReport {
        rows,
        measured_violations: measured.ordering_violations(),
        model_violations: model.ordering_violations(),
        measured_fue_stall: measured.fue_stall_total(),
        model_fue_stall: model.fue_stall_total(),
        measured_gce_stall: measured.gce_stall_total(),
        model_gce_stall: model.gce_stall_total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn table1() -> HardwareParams {
        HardwareParams::default()
    }

    #[test]
    fn unit_tiles() {
        assert_eq!(gce_cycles(32, 32, 1, &table1()), 2);
        let hw = HardwareParams {
            l_fused: 0,
            ..table1()
        };
        // N = D = p_N = p_D, k = H
        assert_eq!(grapher_cycles(32, 32, 16, &hw), 3 * 32 + 1);
        assert_eq!(ffn_cycles(32, 32, &table1()), 8 * 32 + 14);
    }

    #[test]
    fn vig_ti_shape() {
        let hw = table1();
        assert_eq!(gce_cycles(196, 192, 9, &hw), 350);
        assert_eq!(grapher_cycles(196, 192, 9, &hw), 24_248);
        assert_eq!(ffn_cycles(196, 192, &hw), 56_462);
        assert_eq!(gce_cycles(392, 192, 9, &hw), 13 * 13 * 6 + 111);
        let c = layer_cost(196, 192, 9, &hw);
        assert_eq!(c.t_fue, 24_248 + 56_462);
        assert!(c.t_ffn > c.t_grapher);
    }

    fn costs(pairs: &[(u64, u64)]) -> Vec<BlockCost> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(g, f))| BlockCost {
                cost: LayerCost {
                    t_gce: g,
                    t_grapher: f,
                    t_ffn: 0,
                    t_fue: f,
                    t_sync: 0,
                },
                stage_start: i == 0,
            })
            .collect()
    }

    #[test]
    fn single_layer_has_nothing_to_overlap() {
        let c = costs(&[(5, 7)]);
        for s in [Schedule::Sequential, Schedule::Overlapped] {
            assert_eq!(simulate(&c, 2, s, 1.0).total, 12);
        }
    }

    #[test]
    fn balanced_layers_approach_half() {
        let c = costs(&[(10, 10); 100]);
        let seq = simulate(&c, 2, Schedule::Sequential, 1.0).total;
        let ovl = simulate(&c, 2, Schedule::Overlapped, 1.0).total;
        assert_eq!(seq, 2000);
        assert_eq!(ovl, 10 + 99 * 10 + 10);
        assert!((seq as f64 / ovl as f64 - 2.0).abs() < 0.03);
    }

    #[test]
    fn overlapped_timeline_respects_dependencies() {
        let c = costs(&[(4, 3), (9, 2), (1, 8), (6, 6)]);
        for n_buf in [1, 2, 3] {
            let t = simulate(&c, n_buf, Schedule::Overlapped, 1.0);
            assert_eq!(t.total, closed_form_total(&c, Schedule::Overlapped));
            assert!(t.ordering_violations().is_empty(), "{:?}", t.ordering_violations());
            for l in &t.layers {
                assert!(l.fue_start >= l.gce_end);
            }
        }
    }

    #[test]
    fn small_buffer_stalls_the_gce() {
        let c = costs(&[(1, 10), (1, 10), (1, 10)]);
        let one = simulate(&c, 1, Schedule::Overlapped, 1.0);
        let two = simulate(&c, 2, Schedule::Overlapped, 1.0);
        assert_eq!(one.total, two.total);
        assert!(one.gce_stall_total() > 0);
        assert_eq!(two.gce_stall_total(), 0);
    }

    #[test]
    fn sync_counts_once_per_layer() {
        let mut c = costs(&[(3, 5), (8, 2), (2, 2)]);
        for b in &mut c {
            b.cost.t_sync = 4;
        }
        for s in [Schedule::Sequential, Schedule::Overlapped] {
            assert_eq!(simulate(&c, 2, s, 1.0).total, closed_form_total(&c, s));
        }
        assert_eq!(closed_form_total(&c, Schedule::Overlapped), 3 + 8 + 2 + 2 + 12);
    }

    #[test]
    fn vig_ti_latency_near_reported() {
        let spec = preset("ViG-Ti").unwrap();
        let t = total_latency(&spec, &table1(), Schedule::Sequential);
        assert_eq!(t.total, 12 * (350 + 24_248 + 56_462));
        assert!((t.total_ms() - 3.2424).abs() < 1e-3);
        let p = predict(&spec, &table1());
        assert!(p.speedup() >= 1.0 && p.speedup() < 1.01);
    }

    #[test]
    fn pyramid_stages_resynchronize() {
        let spec = preset("ViG-Py-Ti").unwrap();
        let hw = table1();
        let c = block_costs(&spec, &hw);
        let t = total_latency(&spec, &hw, Schedule::Overlapped);
        assert_eq!(t.total, closed_form_total(&c, Schedule::Overlapped));
        for (i, l) in t.layers.iter().enumerate().skip(1) {
            if l.stage_start {
                assert!(l.gce_start >= t.layers[i - 1].fue_end);
            }
        }
        assert!(t.ordering_violations().is_empty());
    }

    #[test]
    fn resources() {
        let spec = preset("ViG-Ti").unwrap();
        let hw = table1();
        let r = resource_estimate(&spec, &hw);
        assert_eq!(r.dsp, 1024);
        assert_eq!(r.lut, libm::ceil(hw.c2 * 1024.0) as u64);
        assert_eq!(r.bytes_onchip, 308_112);
        let wide = HardwareParams { p_n: 64, ..hw };
        assert_eq!(resource_estimate(&spec, &wide).dsp, 2048);
    }

    #[test]
    fn alignment_with_itself() {
        let spec = preset("ViG-Py-Ti").unwrap();
        let model = total_latency(&spec, &table1(), Schedule::Overlapped);
        let report = measured_vs_model(&model, &model).unwrap();
        assert_eq!(report.violation_count(), 0);
        assert_eq!(report.rows.len(), 12);
        let short = PipelineTimeline {
            layers: model.layers[..3].to_vec(),
            ..model.clone()
        };
        assert!(matches!(measured_vs_model(&short, &model), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn violations_are_detected() {
        let c = costs(&[(2, 2), (2, 2)]);
        let mut t = simulate(&c, 2, Schedule::Overlapped, 1.0);
        t.layers[1].fue_start = 0;
        assert!(!t.ordering_violations().is_empty());
    }
}
