//! Threaded execution: bounded edge streaming, row-parallel graph
//! construction, and the two-worker overlapped GraphLeap executor.
//!
//! The executor runs a graph producer (GCE) and a feature consumer (FUE) on
//! scoped threads. They talk through a [`GraphQueue`] of `n_buf` slots and a
//! handoff channel carrying each block's output features back to the
//! producer. Every graph is a pure function of data that already exists when
//! it is built, so the logits match
//! [`run_graphleap_sequential`](graphleap_core::schedule::run_graphleap_sequential)
//! bit for bit regardless of thread timing.

use std::collections::VecDeque;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Instant;

use graphleap_core::config::{BlockInfo, HardwareParams};
use graphleap_core::gce::{build_graph_rows, pairwise_distances_tiled, DistanceTilePlan, EdgeMessage, EdgeSink};
use graphleap_core::perf::{LayerTiming, PipelineTimeline, TimeUnit};
use graphleap_core::schedule::{Engine, RunOutput, Trace};
use graphleap_core::tensor::{FeatureMatrix, GraphTopology};
use graphleap_core::Error as CoreError;

use crate::error::{Error, Result};

/// Producer half of a bounded edge stream.
#[derive(Debug)]
pub struct ChannelSink {
    tx: SyncSender<EdgeMessage>,
}

impl EdgeSink for ChannelSink {
    fn push(&mut self, msg: EdgeMessage) -> graphleap_core::Result<()> {
        self.tx.send(msg).map_err(|_| CoreError::QueueClosed)
    }
}

/// Bounded edge stream; `push` blocks while `capacity` messages are queued.
pub fn edge_channel(capacity: usize) -> (ChannelSink, Receiver<EdgeMessage>) {
    let (tx, rx) = mpsc::sync_channel(capacity.max(1));
    (ChannelSink { tx }, rx)
}

/// Reassembles a streamed graph, checking row order and the end marker.
pub fn collect_edges(rx: &Receiver<EdgeMessage>, nodes: usize, k: usize) -> Result<GraphTopology> {
    let mut neighbors = Vec::with_capacity(nodes * k);
    let mut next = 0u32;
    loop {
        match rx.recv().map_err(|_| CoreError::QueueClosed)? {
            EdgeMessage::Row { node, neighbors: row } => {
                if node != next || row.len() != k {
                    return Err(Error::Worker(format!("edge stream out of order at row {node}")));
                }
                neighbors.extend(row);
                next += 1;
            }
            EdgeMessage::EndOfGraph => break,
        }
    }
    Ok(GraphTopology::new(nodes, k, neighbors)?)
}

/// [`build_graph`](graphleap_core::gce::build_graph) with the top-k selection
/// split across `threads` workers by contiguous row ranges. The result does
/// not depend on `threads`.
pub fn build_graph_parallel(
    x: &FeatureMatrix,
    k: usize,
    d: usize,
    plan: &DistanceTilePlan,
    threads: usize,
) -> graphleap_core::Result<GraphTopology> {
    let n = x.rows();
    if k == 0 || d == 0 || k * d > n {
        return Err(CoreError::DilationTooLarge {
            needed: k * d,
            available: n,
        });
    }
    let dist = pairwise_distances_tiled(x, plan)?;
    let chunk = n.div_ceil(threads.clamp(1, n));
    let pieces: Vec<graphleap_core::Result<Vec<u32>>> = thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let dist = &dist;
                s.spawn(move || build_graph_rows(dist, start..(start + chunk).min(n), k, d))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    let mut neighbors = Vec::with_capacity(n * k);
    for p in pieces {
        neighbors.extend(p?);
    }
    GraphTopology::new(n, k, neighbors)
}

/// A graph waiting in the look-ahead buffer.
#[derive(Debug)]
struct QueuedGraph {
    layer: usize,
    source_layer: usize,
    graph: GraphTopology,
    gce_start: u64,
    gce_end: u64,
}

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<QueuedGraph>,
    /// Popped graphs whose update has not finished yet.
    in_use: usize,
    closed: bool,
}

/// Look-ahead buffer of `capacity` graph slots.
///
/// A slot is taken when a graph is pushed and freed by [`GraphQueue::release`]
/// once the consumer has finished using it, mirroring on-chip buffers that
/// hold a topology until its update completes. Either side may close the
/// queue; blocked calls on the other side then fail with `QueueClosed`.
#[derive(Debug)]
struct GraphQueue {
    capacity: usize,
    state: Mutex<QueueState>,
    changed: Condvar,
}

impl GraphQueue {
    fn new(capacity: usize) -> Self {
        GraphQueue {
            capacity: capacity.max(1),
            state: Mutex::new(QueueState::default()),
            changed: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks while every slot is taken. Returns how long it blocked.
    fn push(&self, item: QueuedGraph, epoch: Instant) -> graphleap_core::Result<u64> {
        let mut st = self.lock();
        let mut waited_from = None;
        while !st.closed && st.items.len() + st.in_use >= self.capacity {
            waited_from.get_or_insert_with(|| nanos(epoch));
            st = self.changed.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        if st.closed {
            return Err(CoreError::QueueClosed);
        }
        let stall = waited_from.map_or(0, |t| nanos(epoch) - t);
        st.items.push_back(item);
        self.changed.notify_all();
        Ok(stall)
    }

    fn pop(&self) -> graphleap_core::Result<QueuedGraph> {
        let mut st = self.lock();
        loop {
            if let Some(item) = st.items.pop_front() {
                st.in_use += 1;
                self.changed.notify_all();
                return Ok(item);
            }
            if st.closed {
                return Err(CoreError::QueueClosed);
            }
            st = self.changed.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn release(&self) {
        let mut st = self.lock();
        st.in_use = st.in_use.saturating_sub(1);
        self.changed.notify_all();
    }

    fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }
}

/// Closes the queue when a worker exits, including by panic.
struct CloseOnDrop<'a>(&'a GraphQueue);

impl Drop for CloseOnDrop<'_> {
    fn drop(&mut self) {
        self.0.close();
    }
}

/// Features handed from the consumer to the producer after a block.
struct Handoff {
    /// Block whose input these features are.
    layer: usize,
    x: Arc<FeatureMatrix>,
}

fn nanos(epoch: Instant) -> u64 {
    u64::try_from(epoch.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

#[derive(Debug, Clone)]
pub struct OverlappedOutput {
    pub logits: Vec<f32>,
    pub trace: Trace,
    /// Measured wall-clock schedule in nanoseconds.
    pub timeline: PipelineTimeline,
}

impl OverlappedOutput {
    pub fn into_run_output(self) -> RunOutput {
        RunOutput {
            logits: self.logits,
            trace: self.trace,
        }
    }
}

/// Returns how long each graph waited for a buffer slot, by layer.
fn produce(
    engine: &Engine<'_>,
    blocks: &[BlockInfo],
    queue: &GraphQueue,
    handoffs: Receiver<Handoff>,
    epoch: Instant,
) -> graphleap_core::Result<Vec<(usize, u64)>> {
    let _close = CloseOnDrop(queue);
    let mut stalls = Vec::with_capacity(blocks.len());
    let mut emit = |b: &BlockInfo, source: usize, u: &FeatureMatrix, start: u64| -> graphleap_core::Result<()> {
        let graph = engine.graph(b, u)?;
        let item = QueuedGraph {
            layer: b.index,
            source_layer: source,
            graph,
            gce_start: start,
            gce_end: nanos(epoch),
        };
        let stall = queue.push(item, epoch)?;
        stalls.push((b.index, stall));
        Ok(())
    };
    // The loop ends when the consumer drops its sender.
    for Handoff { layer, x } in handoffs {
        let b = &blocks[layer];
        let start = nanos(epoch);
        let u = engine.project(b, &x)?;
        let next = blocks.get(layer + 1).filter(|n| !n.stage_start);
        if b.stage_start {
            emit(b, layer, &u, start)?;
            if let Some(next) = next {
                emit(next, layer, &u, nanos(epoch))?;
            }
        } else if let Some(next) = next {
            emit(next, layer, &u, start)?;
        }
    }
    Ok(stalls)
}

struct Consumed {
    logits: Vec<f32>,
    trace: Trace,
    layers: Vec<LayerTiming>,
}

fn consume(
    engine: &Engine<'_>,
    blocks: &[BlockInfo],
    x0: &FeatureMatrix,
    queue: &GraphQueue,
    handoff: mpsc::Sender<Handoff>,
    epoch: Instant,
) -> graphleap_core::Result<Consumed> {
    let _close = CloseOnDrop(queue);
    let send = |layer: usize, x: &Arc<FeatureMatrix>| {
        handoff
            .send(Handoff { layer, x: Arc::clone(x) })
            .map_err(|_| CoreError::QueueClosed)
    };
    let mut trace = Trace::default();
    let mut layers = Vec::with_capacity(blocks.len());
    let mut x = Arc::new(x0.clone());
    if !blocks.is_empty() {
        send(0, &x)?;
    }
    for b in blocks {
        let wait_start = nanos(epoch);
        let item = queue.pop()?;
        let fue_start = nanos(epoch);
        if item.layer != b.index {
            return Err(CoreError::SpecMismatch(format!(
                "graph for block {} arrived while block {} was waiting",
                item.layer, b.index
            )));
        }
        trace.record(b.index, item.source_layer, &item.graph, false);
        let u = engine.project(b, &x)?;
        let mut next = engine.update(b, &x, &u, &item.graph)?;
        let stage_end = engine.ends_stage(b);
        if stage_end {
            next = engine.transition(b.stage, &next)?;
        }
        let fue_end = nanos(epoch);
        queue.release();
        layers.push(LayerTiming {
            layer: b.index,
            stage_start: b.stage_start,
            gce_start: item.gce_start,
            gce_end: item.gce_end,
            fue_start,
            fue_end,
            gce_stall: 0,
            fue_stall: fue_start.saturating_sub(wait_start.max(item.gce_end)),
        });
        x = Arc::new(next);
        if b.index + 1 < blocks.len() {
            send(b.index + 1, &x)?;
        }
    }
    drop(handoff);
    Ok(Consumed {
        logits: engine.classify(&x)?,
        trace,
        layers,
    })
}

/// GraphLeap inference with graph construction for block `l+1` running
/// concurrently with the feature update of block `l`.
///
/// The first error from either worker tears the pipeline down and is
/// returned; a panicking consumer surfaces as `QueueClosed`.
pub fn run_graphleap_overlapped(
    x0: &FeatureMatrix,
    engine: &Engine<'_>,
    hw: &HardwareParams,
) -> Result<OverlappedOutput> {
    hw.validate().map_err(Error::Config)?;
    let blocks = engine.spec.blocks();
    let queue = GraphQueue::new(hw.n_buf);
    let (tx, rx) = mpsc::channel();
    let epoch = Instant::now();
    let (produced, consumed) = thread::scope(|s| {
        let producer = s.spawn(|| produce(engine, &blocks, &queue, rx, epoch));
        let consumer = s.spawn(|| consume(engine, &blocks, x0, &queue, tx, epoch));
        (producer.join(), consumer.join())
    });
    let total = nanos(epoch);

    let produced = produced.map_err(|_| Error::Worker("graph producer panicked".into()))?;
    let consumed = consumed.map_err(|_| Error::Core(CoreError::QueueClosed))?;
    let (stalls, mut out) = match (produced, consumed) {
        (Ok(stalls), Ok(c)) => (stalls, c),
        (Err(e), Err(CoreError::QueueClosed)) | (Err(CoreError::QueueClosed), Err(e)) => return Err(e.into()),
        (Ok(_), Err(e)) | (Err(e), _) => return Err(e.into()),
    };
    for (layer, stall) in stalls {
        if let Some(l) = out.layers.get_mut(layer) {
            l.gce_stall = stall;
        }
    }
    Ok(OverlappedOutput {
        logits: out.logits,
        trace: out.trace,
        timeline: PipelineTimeline {
            unit: TimeUnit::Nanoseconds,
            layers: out.layers,
            total,
            total_seconds: total as f64 * 1e-9,
        },
    })
}
