//! Graph construction: tiled pairwise distances, bounded top-k selection and
//! dilated kNN graphs.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::tensor::{FeatureMatrix, GraphTopology};
use crate::{Error, Result};

/// How the distance computation is tiled over PEs and channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceTilePlan {
    pub p_n: usize,
    pub p_d: usize,
    pub num_tiles: usize,
    pub nodes_per_pe: usize,
}

impl DistanceTilePlan {
    pub fn new(nodes: usize, dim: usize, p_n: usize, p_d: usize) -> Result<Self> {
        if p_n == 0 || p_d == 0 {
            return Err(Error::DimensionMismatch(format!(
                "tile plan needs p_N, p_D >= 1, got {p_n}, {p_d}"
            )));
        }
        Ok(DistanceTilePlan {
            p_n,
            p_d,
            num_tiles: dim.div_ceil(p_d),
            nodes_per_pe: nodes.div_ceil(p_n),
        })
    }

    pub fn for_features(x: &FeatureMatrix, p_n: usize, p_d: usize) -> Result<Self> {
        Self::new(x.rows(), x.cols(), p_n, p_d)
    }

    fn check(&self, x: &FeatureMatrix) -> Result<()> {
        if self.p_n == 0
            || self.p_d == 0
            || self.num_tiles * self.p_d < x.cols()
            || self.nodes_per_pe * self.p_n < x.rows()
            || self.num_tiles != x.cols().div_ceil(self.p_d)
        {
            return Err(Error::DimensionMismatch(format!(
                "plan {self:?} does not cover a {}x{} feature matrix",
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }
}

/// Row-major N x N matrix of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f32>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Squared distance between two rows, accumulated one `p_d`-wide tile at a
/// time. The last tile is implicitly zero-padded.
#[inline]
fn tiled_sq_distance(a: &[f32], b: &[f32], p_d: usize) -> f32 {
    let mut acc = 0.0f32;
    for (ta, tb) in a.chunks(p_d).zip(b.chunks(p_d)) {
        let mut tile = 0.0f32;
        for (&u, &v) in ta.iter().zip(tb) {
            let diff = u - v;
            tile += diff * diff;
        }
        acc += tile;
    }
    acc
}

/// Squared pairwise distances, tile by tile.
///
/// Each unordered pair is evaluated once and mirrored, so the result is
/// exactly symmetric; the diagonal is exactly zero.
pub fn pairwise_distances_tiled(x: &FeatureMatrix, plan: &DistanceTilePlan) -> Result<DistanceMatrix> {
    plan.check(x)?;
    let n = x.rows();
    let mut data = vec![0.0f32; n * n];
    for i in 0..n {
        let xi = x.row(i);
        for j in i + 1..n {
            let d = tiled_sq_distance(xi, x.row(j), plan.p_d);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// Candidate neighbor ordered by distance, then self-first, then index.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f32,
    not_self: bool,
    index: u32,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.not_self.cmp(&other.not_self))
            .then(self.index.cmp(&other.index))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Bounded max-heap that keeps the `capacity` smallest candidates seen.
#[derive(Debug)]
pub struct NeighborHeap {
    capacity: usize,
    self_index: u32,
    heap: BinaryHeap<Candidate>,
}

impl NeighborHeap {
    pub fn new(capacity: usize, self_index: usize) -> Self {
        NeighborHeap {
            capacity,
            self_index: self_index as u32,
            heap: BinaryHeap::with_capacity(capacity + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, index: usize, dist: f32) {
        if self.capacity == 0 {
            return;
        }
        let c = Candidate {
            dist,
            not_self: index as u32 != self.self_index,
            index: index as u32,
        };
        if self.heap.len() < self.capacity {
            self.heap.push(c);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if c < *top {
                *top = c;
            }
        }
    }

    /// Retained candidates, nearest first.
    pub fn into_sorted(self) -> Vec<(u32, f32)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.dist))
            .collect()
    }
}

/// Dilated top-k over one row of distances.
///
/// Keeps the `k * d` nearest candidates ordered by `(distance, index)`, with
/// the row's own node placed ahead of any other zero-distance candidate, then
/// returns every `d`-th entry starting from the first. The first index is
/// therefore always `self_index`.
pub fn topk_dilated(dist_row: &[f32], self_index: usize, k: usize, d: usize) -> Result<Vec<u32>> {
    let needed = k * d;
    if k == 0 || d == 0 || needed > dist_row.len() {
        return Err(Error::DilationTooLarge {
            needed,
            available: dist_row.len(),
        });
    }
    if self_index >= dist_row.len() {
        return Err(Error::IndexOutOfRange {
            index: self_index,
            len: dist_row.len(),
        });
    }
    let mut heap = NeighborHeap::new(needed, self_index);
    for (j, &dist) in dist_row.iter().enumerate() {
        let dist = if j == self_index { 0.0 } else { dist };
        heap.push(j, dist);
    }
    Ok(heap
        .into_sorted()
        .into_iter()
        .step_by(d)
        .map(|(j, _)| j)
        .collect())
}

/// Dilated kNN graph of the rows `rows` only. Used to split construction
/// across workers; concatenating the pieces in order equals [`build_graph`].
pub fn build_graph_rows(
    dist: &DistanceMatrix,
    rows: core::ops::Range<usize>,
    k: usize,
    d: usize,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(rows.len() * k);
    for i in rows {
        out.extend(topk_dilated(dist.row(i), i, k, d)?);
    }
    Ok(out)
}

/// Dilated kNN graph over the feature rows of `x`.
pub fn build_graph(x: &FeatureMatrix, k: usize, d: usize, plan: &DistanceTilePlan) -> Result<GraphTopology> {
    let n = x.rows();
    if k == 0 || d == 0 || k * d > n {
        return Err(Error::DilationTooLarge {
            needed: k * d,
            available: n,
        });
    }
    let dist = pairwise_distances_tiled(x, plan)?;
    let neighbors = build_graph_rows(&dist, 0..n, k, d)?;
    GraphTopology::new(n, k, neighbors)
}

/// Message on the edge stream between graph construction and feature update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeMessage {
    Row { node: u32, neighbors: Vec<u32> },
    EndOfGraph,
}

/// Destination for streamed edge rows. `push` may block while the consumer
/// is behind and fails once the consumer is gone.
pub trait EdgeSink {
    fn push(&mut self, msg: EdgeMessage) -> Result<()>;
}

impl EdgeSink for Vec<EdgeMessage> {
    fn push(&mut self, msg: EdgeMessage) -> Result<()> {
        Vec::push(self, msg);
        Ok(())
    }
}

/// Emits rows in node order followed by an end-of-graph marker.
pub fn stream_edges<S: EdgeSink + ?Sized>(g: &GraphTopology, sink: &mut S) -> Result<()> {
    for (i, row) in g.rows().enumerate() {
        sink.push(EdgeMessage::Row {
            node: i as u32,
            neighbors: row.to_vec(),
        })?;
    }
    sink.push(EdgeMessage::EndOfGraph)
}
