//! Little-endian binary formats.
//!
//! Every array record starts with a 14-byte fixed header followed by the
//! dimensions and a row-major payload:
//!
//! ```text
//! "GLPT" | version u32 | dtype u8 | rank u8 | 4 reserved zero bytes
//! dims: rank x u64
//! payload: product(dims) x 4 bytes
//! ```
//!
//! dtype 0 is `f32` (feature matrices, images, weights); dtype 1 is `u32`
//! (graph neighbor indices, conventionally stored as `.glpg`).
//!
//! A `.glpw` weight bundle is a table of named array records:
//!
//! ```text
//! "GLPW" | version u32 | block count u32 | entry count u32
//! entries: name length u16 | UTF-8 name | offset u64 | length u64
//! records at the given absolute offsets
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use graphleap_core::config::ModelSpec;
use graphleap_core::stages::ImageTensor;
use graphleap_core::tensor::{GraphTopology, Matrix};
use graphleap_core::weights::{BatchNormParams, BlockWeights, ModelWeights, NormParams, StemWeights};

use crate::error::{Error, FormatError, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"GLPT";
pub const BUNDLE_MAGIC: [u8; 4] = *b"GLPW";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 14;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    U32 = 1,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self, FormatError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U32),
            other => Err(FormatError::UnsupportedDtype(other)),
        }
    }
}

/// Size on disk of one array record.
pub fn record_len(rank: usize, elements: usize) -> u64 {
    HEADER_BYTES + 8 * rank as u64 + 4 * elements as u64
}

fn write_header<W: Write>(w: &mut W, dtype: Dtype, dims: &[usize]) -> io::Result<()> {
    let rank = u8::try_from(dims.len()).map_err(|_| io::Error::other("rank exceeds 255"))?;
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[dtype as u8, rank, 0, 0, 0, 0])?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_full<R: Read>(r: &mut R, len: u64) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if (buf.len() as u64) < len {
        return Err(FormatError::TruncatedPayload {
            expected: len,
            found: buf.len() as u64,
        });
    }
    Ok(buf)
}

fn read_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<(), FormatError> {
    let raw = read_full(r, 4)?;
    let found = [raw[0], raw[1], raw[2], raw[3]];
    if found != expected {
        return Err(FormatError::BadMagic { found, expected });
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let b = read_full(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, FormatError> {
    let b = read_full(r, 8)?;
    let mut a = [0u8; 8];
    a.copy_from_slice(&b);
    Ok(u64::from_le_bytes(a))
}

fn read_header<R: Read>(r: &mut R) -> Result<(Dtype, Vec<usize>), FormatError> {
    read_magic(r, TENSOR_MAGIC)?;
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let rest = read_full(r, 6)?;
    let dtype = Dtype::from_code(rest[0])?;
    let rank = usize::from(rest[1]);
    let mut raw = Vec::with_capacity(rank);
    for _ in 0..rank {
        raw.push(read_u64(r)?);
    }
    let bad = || FormatError::BadDims(raw.clone());
    if rank == 0 || rank > MAX_RANK || raw.contains(&0) {
        return Err(bad());
    }
    let dims: Vec<usize> = raw.iter().map(|&d| usize::try_from(d)).collect::<Result<_, _>>().map_err(|_| bad())?;
    dims.iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(bad)?;
    Ok((dtype, dims))
}

fn read_words<R: Read>(r: &mut R, elements: usize) -> Result<Vec<[u8; 4]>, FormatError> {
    let raw = read_full(r, 4 * elements as u64)?;
    Ok(raw.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
}

/// Writes an f32 array of any rank. Returns the bytes written.
pub fn write_array<W: Write>(w: &mut W, dims: &[usize], data: &[f32]) -> io::Result<u64> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "dims do not match payload length"));
    }
    write_header(w, Dtype::F32, dims)?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(record_len(dims.len(), data.len()))
}

/// Reads an f32 array of any rank, rejecting NaN and infinities.
pub fn read_array<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f32>), FormatError> {
    let (dtype, dims) = read_header(r)?;
    if dtype != Dtype::F32 {
        return Err(FormatError::UnexpectedDtype {
            expected: Dtype::F32 as u8,
            found: dtype as u8,
        });
    }
    let words = read_words(r, dims.iter().product())?;
    let mut data = Vec::with_capacity(words.len());
    for (index, w) in words.into_iter().enumerate() {
        let v = f32::from_le_bytes(w);
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue { index });
        }
        data.push(v);
    }
    Ok((dims, data))
}

fn expect_rank(dims: &[usize], rank: usize) -> Result<(), FormatError> {
    if dims.len() != rank {
        return Err(FormatError::UnexpectedRank {
            expected: rank,
            found: dims.len(),
        });
    }
    Ok(())
}

pub fn write_tensor<W: Write>(t: &Matrix, w: &mut W) -> io::Result<u64> {
    write_array(w, &[t.rows(), t.cols()], t.data())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Matrix, FormatError> {
    let (dims, data) = read_array(r)?;
    expect_rank(&dims, 2)?;
    Matrix::new(dims[0], dims[1], data).map_err(FormatError::Invalid)
}

pub fn write_image<W: Write>(img: &ImageTensor, w: &mut W) -> io::Result<u64> {
    write_array(w, &img.dims(), img.data())
}

/// Reads a 3 x H x W image.
pub fn read_image<R: Read>(r: &mut R) -> Result<ImageTensor, FormatError> {
    let (dims, data) = read_array(r)?;
    expect_rank(&dims, 3)?;
    ImageTensor::new(dims[0], dims[1], dims[2], data).map_err(FormatError::Invalid)
}

pub fn write_graph<W: Write>(g: &GraphTopology, w: &mut W) -> io::Result<u64> {
    write_header(w, Dtype::U32, &[g.nodes(), g.k()])?;
    for v in g.indices() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(record_len(2, g.indices().len()))
}

/// Reads an `N x k` index table and checks it is a valid topology.
pub fn read_graph<R: Read>(r: &mut R) -> Result<GraphTopology, FormatError> {
    let (dtype, dims) = read_header(r)?;
    if dtype != Dtype::U32 {
        return Err(FormatError::UnexpectedDtype {
            expected: Dtype::U32 as u8,
            found: dtype as u8,
        });
    }
    expect_rank(&dims, 2)?;
    let words = read_words(r, dims[0] * dims[1])?;
    let neighbors = words.into_iter().map(u32::from_le_bytes).collect();
    GraphTopology::new(dims[0], dims[1], neighbors).map_err(FormatError::Invalid)
}

/// Named arrays of a `.glpw` bundle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBundle {
    pub block_count: usize,
    pub entries: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn matrix_entry(m: &Matrix) -> (Vec<usize>, Vec<f32>) {
    (vec![m.rows(), m.cols()], m.data().to_vec())
}

fn stacked_entry(ms: &[Matrix]) -> (Vec<usize>, Vec<f32>) {
    let (r, c) = ms.first().map_or((0, 0), Matrix::shape);
    let data = ms.iter().flat_map(|m| m.data().iter().copied()).collect();
    (vec![ms.len(), r, c], data)
}

fn vector_entry(v: &[f32]) -> (Vec<usize>, Vec<f32>) {
    (vec![v.len()], v.to_vec())
}

impl WeightBundle {
    pub fn from_weights(w: &ModelWeights) -> Self {
        let mut e = BTreeMap::new();
        let mut put = |name: String, entry| {
            e.insert(name, entry);
        };
        put("stem.proj".into(), matrix_entry(&w.stem.proj));
        put("stem.bn.gamma".into(), vector_entry(&w.stem.bn.gamma));
        put("stem.bn.beta".into(), vector_entry(&w.stem.bn.beta));
        put("stem.bn.mean".into(), vector_entry(&w.stem.bn.mean));
        put("stem.bn.var".into(), vector_entry(&w.stem.bn.var));
        put("stem.bn.eps".into(), vector_entry(&[w.stem.bn.eps]));
        put("positional".into(), matrix_entry(&w.positional));
        for (i, b) in w.blocks.iter().enumerate() {
            put(format!("block.{i}.w_in"), matrix_entry(&b.w_in));
            put(format!("block.{i}.w_x"), stacked_entry(&b.w_x));
            put(format!("block.{i}.w_m"), stacked_entry(&b.w_m));
            put(format!("block.{i}.w_out"), matrix_entry(&b.w_out));
            put(format!("block.{i}.w1"), matrix_entry(&b.w1));
            put(format!("block.{i}.w2"), matrix_entry(&b.w2));
            put(format!("block.{i}.norm1.gain"), vector_entry(&b.norm1.gain));
            put(format!("block.{i}.norm1.bias"), vector_entry(&b.norm1.bias));
            put(format!("block.{i}.norm2.gain"), vector_entry(&b.norm2.gain));
            put(format!("block.{i}.norm2.bias"), vector_entry(&b.norm2.bias));
        }
        for (s, t) in w.transitions.iter().enumerate() {
            put(format!("transition.{s}"), matrix_entry(t));
        }
        put("head".into(), matrix_entry(&w.head));
        WeightBundle {
            block_count: w.blocks.len(),
            entries: e,
        }
    }

    fn take(&mut self, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<f32>), FormatError> {
        let (dims, data) = self
            .entries
            .remove(name)
            .ok_or_else(|| FormatError::Bundle(format!("missing entry `{name}`")))?;
        if dims.len() != rank {
            return Err(FormatError::Bundle(format!(
                "entry `{name}` has rank {}, expected {rank}",
                dims.len()
            )));
        }
        Ok((dims, data))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix, FormatError> {
        let (dims, data) = self.take(name, 2)?;
        Matrix::new(dims[0], dims[1], data).map_err(FormatError::Invalid)
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f32>, FormatError> {
        Ok(self.take(name, 1)?.1)
    }

    fn stacked(&mut self, name: &str) -> Result<Vec<Matrix>, FormatError> {
        let (dims, data) = self.take(name, 3)?;
        let per = dims[1] * dims[2];
        data.chunks(per)
            .map(|c| Matrix::new(dims[1], dims[2], c.to_vec()).map_err(FormatError::Invalid))
            .collect()
    }

    /// Assembles model weights and checks every shape against `spec`.
    pub fn into_weights(mut self, spec: &ModelSpec) -> Result<ModelWeights, FormatError> {
        if self.block_count != spec.total_blocks() {
            return Err(FormatError::Bundle(format!(
                "{} block entries, model has {} blocks",
                self.block_count,
                spec.total_blocks()
            )));
        }
        let eps = self.vector("stem.bn.eps")?;
        let stem = StemWeights {
            proj: self.matrix("stem.proj")?,
            bn: BatchNormParams {
                gamma: self.vector("stem.bn.gamma")?,
                beta: self.vector("stem.bn.beta")?,
                mean: self.vector("stem.bn.mean")?,
                var: self.vector("stem.bn.var")?,
                eps: eps.first().copied().unwrap_or(BatchNormParams::DEFAULT_EPS),
            },
        };
        let positional = self.matrix("positional")?;
        let mut blocks = Vec::with_capacity(self.block_count);
        for i in 0..self.block_count {
            let w_x = self.stacked(&format!("block.{i}.w_x"))?;
            let w_in = self.matrix(&format!("block.{i}.w_in"))?;
            blocks.push(BlockWeights {
                dim: w_in.rows(),
                heads: w_x.len(),
                w_in,
                w_x,
                w_m: self.stacked(&format!("block.{i}.w_m"))?,
                w_out: self.matrix(&format!("block.{i}.w_out"))?,
                w1: self.matrix(&format!("block.{i}.w1"))?,
                w2: self.matrix(&format!("block.{i}.w2"))?,
                norm1: NormParams {
                    gain: self.vector(&format!("block.{i}.norm1.gain"))?,
                    bias: self.vector(&format!("block.{i}.norm1.bias"))?,
                },
                norm2: NormParams {
                    gain: self.vector(&format!("block.{i}.norm2.gain"))?,
                    bias: self.vector(&format!("block.{i}.norm2.bias"))?,
                },
            });
        }
        let transitions = (0..spec.stages.len().saturating_sub(1))
            .map(|s| self.matrix(&format!("transition.{s}")))
            .collect::<Result<Vec<_>, _>>()?;
        let head = self.matrix("head")?;
        if let Some(extra) = self.entries.keys().next() {
            return Err(FormatError::Bundle(format!("unexpected entry `{extra}`")));
        }
        let weights = ModelWeights {
            stem,
            positional,
            blocks,
            transitions,
            head,
        };
        weights.check(spec).map_err(FormatError::Invalid)?;
        Ok(weights)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<u64> {
        let mut records = Vec::with_capacity(self.entries.len());
        for (name, (dims, data)) in &self.entries {
            let mut buf = Vec::with_capacity(record_len(dims.len(), data.len()) as usize);
            write_array(&mut buf, dims, data)?;
            records.push((name.as_bytes(), buf));
        }
        let table: u64 = records.iter().map(|(n, _)| 2 + n.len() as u64 + 16).sum();
        let mut offset = 16 + table;
        let too_many = |_| io::Error::other("too many bundle entries");
        w.write_all(&BUNDLE_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.block_count).map_err(too_many)?.to_le_bytes())?;
        w.write_all(&u32::try_from(records.len()).map_err(too_many)?.to_le_bytes())?;
        for (name, rec) in &records {
            let len = u16::try_from(name.len()).map_err(|_| io::Error::other("entry name too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&offset.to_le_bytes())?;
            w.write_all(&(rec.len() as u64).to_le_bytes())?;
            offset += rec.len() as u64;
        }
        for (_, rec) in &records {
            w.write_all(rec)?;
        }
        Ok(offset)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, FormatError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = bytes.as_slice();
        read_magic(&mut cur, BUNDLE_MAGIC)?;
        let version = read_u32(&mut cur)?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let block_count = read_u32(&mut cur)? as usize;
        let count = read_u32(&mut cur)?;
        let mut table = Vec::new();
        for _ in 0..count {
            let raw = read_full(&mut cur, 2)?;
            let len = u16::from_le_bytes([raw[0], raw[1]]);
            let name = String::from_utf8(read_full(&mut cur, u64::from(len))?)
                .map_err(|_| FormatError::Bundle("entry name is not UTF-8".into()))?;
            table.push((name, read_u64(&mut cur)?, read_u64(&mut cur)?));
        }
        let mut entries = BTreeMap::new();
        for (name, offset, len) in table {
            let end = offset.checked_add(len).filter(|&e| e <= bytes.len() as u64).ok_or(
                FormatError::TruncatedPayload {
                    expected: offset.saturating_add(len),
                    found: bytes.len() as u64,
                },
            )?;
            let mut rec = &bytes[offset as usize..end as usize];
            let entry = read_array(&mut rec)?;
            if entries.insert(name.clone(), entry).is_some() {
                return Err(FormatError::Bundle(format!("duplicate entry `{name}`")));
            }
        }
        Ok(WeightBundle { block_count, entries })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(Error::file(path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(Error::file(path))
}

fn finish(path: &Path, w: BufWriter<File>) -> Result<()> {
    w.into_inner()
        .map_err(|e| e.into_error())
        .and_then(|f| f.sync_all())
        .map_err(Error::file(path))
}

pub fn save_tensor(path: &Path, t: &Matrix) -> Result<u64> {
    let mut w = create(path)?;
    let n = write_tensor(t, &mut w).map_err(Error::file(path))?;
    finish(path, w)?;
    Ok(n)
}

pub fn load_tensor(path: &Path) -> Result<Matrix> {
    read_tensor(&mut open(path)?).map_err(Error::format(path))
}

pub fn save_image(path: &Path, img: &ImageTensor) -> Result<u64> {
    let mut w = create(path)?;
    let n = write_image(img, &mut w).map_err(Error::file(path))?;
    finish(path, w)?;
    Ok(n)
}

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    read_image(&mut open(path)?).map_err(Error::format(path))
}

pub fn save_graph(path: &Path, g: &GraphTopology) -> Result<u64> {
    let mut w = create(path)?;
    let n = write_graph(g, &mut w).map_err(Error::file(path))?;
    finish(path, w)?;
    Ok(n)
}

pub fn load_graph(path: &Path) -> Result<GraphTopology> {
    read_graph(&mut open(path)?).map_err(Error::format(path))
}

pub fn save_weights(path: &Path, weights: &ModelWeights) -> Result<u64> {
    let mut w = create(path)?;
    let n = WeightBundle::from_weights(weights)
        .write(&mut w)
        .map_err(Error::file(path))?;
    finish(path, w)?;
    Ok(n)
}

pub fn load_weights(path: &Path, spec: &ModelSpec) -> Result<ModelWeights> {
    WeightBundle::read(&mut open(path)?)
        .and_then(|b| b.into_weights(spec))
        .map_err(Error::format(path))
}
