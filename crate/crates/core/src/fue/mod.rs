//! Feature update: banked neighbor gather, max-relative aggregation, the
//! per-head fused update, and the Grapher and FFN blocks built on them.

mod activation;
mod norm;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use activation::{gelu_exact, gelu_pwl, relu};
pub use norm::{batch_norm_inference, layer_norm, layer_norm_with, LAYER_NORM_EPS};

use crate::config::BlockOptions;
use crate::tensor::{FeatureMatrix, GraphTopology, Matrix};
use crate::weights::BlockWeights;
use crate::{Error, Result};

/// Feature rows interleaved across `H` banks: row `i` lives in bank `i mod H`.
#[derive(Debug, Clone)]
pub struct BankedFeatureStore {
    cols: usize,
    rows: usize,
    banks: Vec<Vec<f32>>,
}

/// Features returned by [`BankedFeatureStore::gather`] together with the
/// number of serialized bank rounds the request needed.
#[derive(Debug)]
pub struct Gathered<'a> {
    pub features: Vec<&'a [f32]>,
    pub rounds: usize,
}

impl BankedFeatureStore {
    pub fn new(x: &FeatureMatrix, num_banks: usize) -> Self {
        let num_banks = num_banks.max(1);
        let mut banks = vec![Vec::new(); num_banks];
        for i in 0..x.rows() {
            banks[i % num_banks].extend_from_slice(x.row(i));
        }
        BankedFeatureStore {
            cols: x.cols(),
            rows: x.rows(),
            banks,
        }
    }

    pub fn num_banks(&self) -> usize {
        self.banks.len()
    }

    pub fn bank_of(&self, index: usize) -> usize {
        index % self.banks.len()
    }

    fn row(&self, index: usize) -> &[f32] {
        let h = self.banks.len();
        let slot = index / h;
        &self.banks[index % h][slot * self.cols..(slot + 1) * self.cols]
    }

    /// Fetches rows in request order. A round serves at most one request per
    /// bank, so `rounds` is the largest number of requests hitting one bank.
    pub fn gather(&self, indices: &[u32]) -> Result<Gathered<'_>> {
        let mut per_bank = vec![0usize; self.banks.len()];
        let mut features = Vec::with_capacity(indices.len());
        for &i in indices {
            let i = i as usize;
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
            per_bank[self.bank_of(i)] += 1;
            features.push(self.row(i));
        }
        Ok(Gathered {
            features,
            rounds: per_bank.into_iter().max().unwrap_or(0),
        })
    }

    /// Reassembles the stored matrix.
    pub fn to_matrix(&self) -> FeatureMatrix {
        Matrix::from_fn(self.rows, self.cols, |r, c| self.row(r)[c])
    }
}

fn check_topology(x: &FeatureMatrix, g: &GraphTopology) -> Result<()> {
    if g.nodes() != x.rows() {
        return Err(Error::TopologyMismatch {
            graph: g.nodes(),
            features: x.rows(),
        });
    }
    Ok(())
}

/// `m_i[c] = max_{j in N(i)} (x_j[c] - x_i[c])`.
pub fn mrconv_aggregate(x: &FeatureMatrix, g: &GraphTopology) -> Result<FeatureMatrix> {
    check_topology(x, g)?;
    let mut m = Matrix::zeros(x.rows(), x.cols());
    for (i, nbrs) in g.rows().enumerate() {
        let xi = x.row(i);
        let dst = m.row_mut(i);
        dst.fill(f32::NEG_INFINITY);
        for &j in nbrs {
            for ((d, &xj), &xc) in dst.iter_mut().zip(x.row(j as usize)).zip(xi) {
                *d = d.max(xj - xc);
            }
        }
    }
    Ok(m)
}

/// [`mrconv_aggregate`] through a banked store, also returning the total
/// number of gather rounds over all nodes.
pub fn mrconv_aggregate_banked(
    store: &BankedFeatureStore,
    g: &GraphTopology,
) -> Result<(FeatureMatrix, usize)> {
    if g.nodes() != store.rows {
        return Err(Error::TopologyMismatch {
            graph: g.nodes(),
            features: store.rows,
        });
    }
    let mut m = Matrix::zeros(store.rows, store.cols);
    let mut rounds = 0;
    for (i, nbrs) in g.rows().enumerate() {
        let gathered = store.gather(nbrs)?;
        rounds += gathered.rounds;
        let xi = store.row(i);
        let dst = m.row_mut(i);
        dst.fill(f32::NEG_INFINITY);
        for xj in gathered.features {
            for ((d, &a), &b) in dst.iter_mut().zip(xj).zip(xi) {
                *d = d.max(a - b);
            }
        }
    }
    Ok((m, rounds))
}

/// Per-head `y_h = x_h * W_x,h + m_h * W_m,h`, both products accumulated into
/// the same output without forming `[x, m]`.
pub fn fused_update(
    x: &FeatureMatrix,
    m: &FeatureMatrix,
    w_x: &[Matrix],
    w_m: &[Matrix],
) -> Result<FeatureMatrix> {
    let heads = w_x.len();
    let d = x.cols();
    if x.shape() != m.shape() {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} and messages {:?} differ",
            x.shape(),
            m.shape()
        )));
    }
    if heads == 0 || w_m.len() != heads || !d.is_multiple_of(heads) {
        return Err(Error::ShapeMismatch(format!(
            "D={d} cannot be split into {heads} heads ({} W_m blocks)",
            w_m.len()
        )));
    }
    let dh = d / heads;
    if w_x.iter().chain(w_m).any(|w| w.shape() != (dh, dh)) {
        return Err(Error::ShapeMismatch(format!("head weights must be {dh}x{dh}")));
    }
    let mut y = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let (xr, mr) = (x.row(r), m.row(r));
        let yr = y.row_mut(r);
        for h in 0..heads {
            let span = h * dh..(h + 1) * dh;
            let out = &mut yr[span.clone()];
            for (src, w) in [(&xr[span.clone()], &w_x[h]), (&mr[span.clone()], &w_m[h])] {
                for (i, &a) in src.iter().enumerate() {
                    for (o, &b) in out.iter_mut().zip(w.row(i)) {
                        *o += a * b;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// `U = LN1(X) * W_in`, or `X * W_in` without normalization. Graph
/// construction and MRConv both consume this projection.
pub fn project_input(x: &FeatureMatrix, w: &BlockWeights, opts: &BlockOptions) -> Result<FeatureMatrix> {
    if opts.layer_norm {
        layer_norm_with(x, &w.norm1)?.matmul(&w.w_in)
    } else {
        x.matmul(&w.w_in)
    }
}

/// Grapher with an already projected `U`:
/// `Y = act(fused_update(U, MRConv(U, g))) * W_out + X`.
pub fn grapher_from_projected(
    x_in: &FeatureMatrix,
    u: &FeatureMatrix,
    g: &GraphTopology,
    w: &BlockWeights,
    opts: &BlockOptions,
) -> Result<FeatureMatrix> {
    let m = mrconv_aggregate(u, g)?;
    let updated = fused_update(u, &m, &w.w_x, &w.w_m)?;
    opts.activation
        .apply_matrix(&updated)
        .matmul(&w.w_out)?
        .add(x_in)
}

/// Full Grapher block: input projection, MRConv over `g`, per-head update,
/// activation, output projection and residual.
pub fn grapher_block(
    x_in: &FeatureMatrix,
    g: &GraphTopology,
    w: &BlockWeights,
    opts: &BlockOptions,
) -> Result<FeatureMatrix> {
    let u = project_input(x_in, w, opts)?;
    grapher_from_projected(x_in, &u, g, w, opts)
}

/// `X' = act(Y * W1) * W2 + Y`, with `LN2` applied to the MLP input when
/// normalization is on.
pub fn ffn_block(y: &FeatureMatrix, w: &BlockWeights, opts: &BlockOptions) -> Result<FeatureMatrix> {
    let d = y.cols();
    if w.w1.shape() != (d, 4 * d) || w.w2.shape() != (4 * d, d) {
        return Err(Error::ShapeMismatch(format!(
            "FFN weights {:?}/{:?} do not fit D={d}",
            w.w1.shape(),
            w.w2.shape()
        )));
    }
    let hidden = if opts.layer_norm {
        layer_norm_with(y, &w.norm2)?.matmul(&w.w1)?
    } else {
        y.matmul(&w.w1)?
    };
    opts.activation
        .apply_matrix(&hidden)
        .matmul(&w.w2)?
        .add(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Activation;
    use crate::weights::UniformStream;

    fn plain_relu() -> BlockOptions {
        BlockOptions::plain(Activation::Relu)
    }

    #[test]
    fn gather_rounds() {
        let x = Matrix::from_fn(12, 2, |r, c| (r * 2 + c) as f32);
        let store = BankedFeatureStore::new(&x, 4);
        let g = store.gather(&[0, 1, 2, 3]).unwrap();
        assert_eq!(g.rounds, 1);
        assert_eq!(g.features[2], &[4.0, 5.0]);
        let g = store.gather(&[0, 4, 8]).unwrap();
        assert_eq!(g.rounds, 3);
        assert_eq!(g.features.len(), 3);
        assert_eq!(g.features[1], x.row(4));
        let g = store.gather(&[]).unwrap();
        assert_eq!((g.features.len(), g.rounds), (0, 0));
        assert!(matches!(
            store.gather(&[12]),
            Err(Error::IndexOutOfRange { index: 12, len: 12 })
        ));
        assert!(store.to_matrix().bits_eq(&x));
    }

    #[test]
    fn mrconv_hand_example() {
        let x = Matrix::new(2, 2, vec![1.0, 2.0, 4.0, 0.0]).unwrap();
        let g = GraphTopology::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let m = mrconv_aggregate(&x, &g).unwrap();
        assert_eq!(m.data(), &[3.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn mrconv_equal_rows_is_zero() {
        let x = Matrix::from_fn(3, 4, |_, c| c as f32 - 1.5);
        let g = GraphTopology::new(3, 2, vec![0, 1, 1, 2, 2, 0]).unwrap();
        let m = mrconv_aggregate(&x, &g).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mrconv_rejects_mismatch() {
        let x = Matrix::zeros(3, 2);
        let g = GraphTopology::new(2, 1, vec![0, 1]).unwrap();
        assert_eq!(
            mrconv_aggregate(&x, &g),
            Err(Error::TopologyMismatch {
                graph: 2,
                features: 3
            })
        );
    }

    #[test]
    fn banked_aggregation_matches_plain() {
        let mut rng = UniformStream::new(3, 9);
        let x = rng.matrix(10, 6, 1.0);
        let g = GraphTopology::new(10, 3, (0..10u32).flat_map(|i| [i, (i + 1) % 10, (i + 4) % 10]).collect()).unwrap();
        let (m, rounds) = mrconv_aggregate_banked(&BankedFeatureStore::new(&x, 4), &g).unwrap();
        assert!(m.bits_eq(&mrconv_aggregate(&x, &g).unwrap()));
        // i and i+4 share a bank unless the +4 wraps past 9 (nodes 6..=9)
        assert_eq!(rounds, 6 * 2 + 4);
    }

    #[test]
    fn fused_identity() {
        let mut rng = UniformStream::new(1, 2);
        let x = rng.matrix(5, 8, 1.0);
        let m = rng.matrix(5, 8, 1.0);
        let eye = vec![Matrix::identity(4); 2];
        let zero = vec![Matrix::zeros(4, 4); 2];
        assert!(fused_update(&x, &m, &eye, &zero).unwrap().bits_eq(&x));
        assert!(fused_update(&x, &m, &eye[..1], &zero).is_err());
    }

    #[test]
    fn residual_only_blocks() {
        let mut rng = UniformStream::new(5, 0);
        let x = rng.matrix(4, 8, 2.0);
        let g = GraphTopology::new(4, 1, vec![0, 1, 2, 3]).unwrap();
        let mut w = BlockWeights::zeros(8, 2);
        w.w_in = Matrix::identity(8);
        w.w_x = vec![Matrix::identity(4); 2];
        for opts in [plain_relu(), BlockOptions::default()] {
            assert!(grapher_block(&x, &g, &w, &opts).unwrap().bits_eq(&x));
            assert!(ffn_block(&x, &w, &opts).unwrap().bits_eq(&x));
        }
    }

    #[test]
    fn ffn_hand_example() {
        let y = Matrix::new(1, 2, vec![1.0, -1.0]).unwrap();
        let mut w = BlockWeights::zeros(2, 1);
        w.w1.set(0, 0, 1.0);
        w.w1.set(1, 1, 1.0);
        w.w2.set(0, 0, 1.0);
        let out = ffn_block(&y, &w, &plain_relu()).unwrap();
        assert_eq!(out.data(), &[2.0, -1.0]);
    }

    #[test]
    fn single_node_grapher() {
        let mut rng = UniformStream::new(11, 0);
        let d = 4;
        let mut w = BlockWeights::zeros(d, 2);
        w.w_in = rng.matrix(d, d, 1.0);
        w.w_x = vec![rng.matrix(2, 2, 1.0), rng.matrix(2, 2, 1.0)];
        w.w_m = vec![rng.matrix(2, 2, 1.0), rng.matrix(2, 2, 1.0)];
        w.w_out = rng.matrix(d, d, 1.0);
        let x = rng.matrix(1, d, 1.0);
        let g = GraphTopology::new(1, 1, vec![0]).unwrap();
        let opts = BlockOptions::plain(Activation::GeluExact);
        let got = grapher_block(&x, &g, &w, &opts).unwrap();
        // M = 0, so Y = gelu(X W_in blockdiag(W_x)) W_out + X
        let wx = BlockWeights::block_diagonal(&w.w_x);
        let want = x
            .matmul(&w.w_in)
            .unwrap()
            .matmul(&wx)
            .unwrap()
            .map(gelu_exact)
            .matmul(&w.w_out)
            .unwrap()
            .add(&x)
            .unwrap();
        assert!(got.approx_eq_rel(&want, 1e-5), "{got:?} vs {want:?}");
    }
}
