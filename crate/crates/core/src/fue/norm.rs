//! LayerNorm over the feature dimension and inference-mode BatchNorm.

use alloc::format;

use crate::tensor::Matrix;
use crate::weights::{BatchNormParams, NormParams};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-6;

/// Per-row `(x - mean) / sqrt(var + 1e-6) * gain + bias`, with biased
/// variance. Statistics are accumulated in f64.
pub fn layer_norm(x: &Matrix, gain: &[f32], bias: &[f32]) -> Result<Matrix> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "layer norm over D={d} given gain/bias of length {}/{}",
            gain.len(),
            bias.len()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|&v| {
                let c = f64::from(v) - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / libm::sqrt(var + f64::from(LAYER_NORM_EPS));
        for (c, dst) in out.row_mut(r).iter_mut().enumerate() {
            let normed = ((f64::from(row[c]) - mean) * inv) as f32;
            *dst = normed * gain[c] + bias[c];
        }
    }
    Ok(out)
}

pub fn layer_norm_with(x: &Matrix, p: &NormParams) -> Result<Matrix> {
    layer_norm(x, &p.gain, &p.bias)
}

/// Channel-wise affine transform with stored statistics.
pub fn batch_norm_inference(x: &Matrix, p: &BatchNormParams) -> Result<Matrix> {
    let d = x.cols();
    if [p.gamma.len(), p.beta.len(), p.mean.len(), p.var.len()]
        .iter()
        .any(|&l| l != d)
    {
        return Err(Error::ShapeMismatch(format!(
            "batch norm parameters do not have length D={d}"
        )));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            let inv = 1.0 / libm::sqrtf(p.var[c] + p.eps);
            *v = (*v - p.mean[c]) * inv * p.gamma[c] + p.beta[c];
        }
    }
    Ok(out)
}
