//! Dense row-major matrices and kNN graph topologies.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major `rows x cols` f32 matrix.
///
/// Node features use it with one row per patch token; weight matrices use it
/// with the input dimension along the rows so that `x * W` is a plain
/// [`Matrix::matmul`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// N x D node features of one layer.
pub type FeatureMatrix = Matrix;

impl Matrix {
    /// Builds a matrix, rejecting empty shapes, a payload of the wrong length,
    /// and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * rhs`. Accumulation runs over the shared dimension in index
    /// order, so results are reproducible bit for bit.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let lhs = self.row(r);
            let dst = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Elementwise `self + rhs`.
    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the column range `start..start + width` into a new matrix.
    pub fn column_slice(&self, start: usize, width: usize) -> Matrix {
        Matrix::from_fn(self.rows, width, |r, c| self.get(r, start + c))
    }

    /// True when both matrices share a shape and every pair of entries
    /// satisfies `|a - b| <= tol * max(|a|, |b|)`.
    pub fn approx_eq_rel(&self, other: &Matrix, tol: f32) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == b || (a - b).abs() <= tol * a.abs().max(b.abs()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bits_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-node neighbor lists of a dilated kNN graph, stored as an N x k index
/// matrix.
///
/// Every row holds distinct indices in `0..N`, and row `i` always contains
/// `i` itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphTopology {
    nodes: usize,
    k: usize,
    neighbors: Vec<u32>,
}

impl GraphTopology {
    pub fn new(nodes: usize, k: usize, neighbors: Vec<u32>) -> Result<Self> {
        if nodes == 0 || k == 0 {
            return Err(Error::ShapeMismatch(format!(
                "graph must have N, k >= 1, got N={nodes} k={k}"
            )));
        }
        if k > nodes {
            return Err(Error::DilationTooLarge {
                needed: k,
                available: nodes,
            });
        }
        if neighbors.len() != nodes * k {
            return Err(Error::ShapeMismatch(format!(
                "graph with N={nodes} k={k} needs {} indices, got {}",
                nodes * k,
                neighbors.len()
            )));
        }
        let mut seen = vec![usize::MAX; nodes];
        for (i, row) in neighbors.chunks_exact(k).enumerate() {
            let mut has_self = false;
            for &j in row {
                let j = j as usize;
                if j >= nodes {
                    return Err(Error::IndexOutOfRange {
                        index: j,
                        len: nodes,
                    });
                }
                if seen[j] == i {
                    return Err(Error::ShapeMismatch(format!(
                        "row {i} lists neighbor {j} twice"
                    )));
                }
                seen[j] = i;
                has_self |= j == i;
            }
            if !has_self {
                return Err(Error::ShapeMismatch(format!("row {i} is missing its self-loop")));
            }
        }
        Ok(GraphTopology {
            nodes,
            k,
            neighbors,
        })
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.neighbors.chunks_exact(self.k)
    }

    #[inline]
    pub fn indices(&self) -> &[u32] {
        &self.neighbors
    }

    /// 64-bit FNV-1a digest over `(N, k, indices)` in little-endian order.
    pub fn digest(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(&(self.nodes as u64).to_le_bytes());
        eat(&(self.k as u64).to_le_bytes());
        for idx in &self.neighbors {
            eat(&idx.to_le_bytes());
        }
        h
    }

    /// Mean over nodes of the Jaccard overlap between the two graphs'
    /// neighbor sets.
    pub fn jaccard(&self, other: &GraphTopology) -> Result<f64> {
        if self.nodes != other.nodes {
            return Err(Error::TopologyMismatch {
                graph: other.nodes,
                features: self.nodes,
            });
        }
        let mut total = 0.0f64;
        for (a, b) in self.rows().zip(other.rows()) {
            let inter = a.iter().filter(|j| b.contains(j)).count();
            let union = a.len() + b.len() - inter;
            total += inter as f64 / union as f64;
        }
        Ok(total / self.nodes as f64)
    }
}
