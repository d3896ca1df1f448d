//! Stem, positional offsets, pyramid downsampling and the classifier head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{ModelSpec, IMAGE_CHANNELS};
use crate::fue::batch_norm_inference;
use crate::tensor::{FeatureMatrix, Matrix};
use crate::weights::{StemWeights, UniformStream, INPUT_STREAM};
use crate::{Error, Result};

/// CHW image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::SizeMismatch(format!(
                "{} values do not form a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(pos) = data
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(Error::NonFinite(pos));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    /// Seeded uniform image for `spec`.
    pub fn random(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = UniformStream::new(seed, INPUT_STREAM);
        let n = IMAGE_CHANNELS * spec.image_size * spec.image_size;
        ImageTensor {
            channels: IMAGE_CHANNELS,
            height: spec.image_size,
            width: spec.image_size,
            data: (0..n).map(|_| rng.next_unit()).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Flattens non-overlapping `patch x patch` tiles in `(channel, row, col)`
/// order; rows of the result follow the patch grid row-major.
pub fn patchify(img: &ImageTensor, patch: usize) -> Result<Matrix> {
    if patch == 0 || !img.height.is_multiple_of(patch) || !img.width.is_multiple_of(patch) {
        return Err(Error::SizeMismatch(format!(
            "{}x{} image is not divisible into {patch}x{patch} patches",
            img.height, img.width
        )));
    }
    let (gh, gw) = (img.height / patch, img.width / patch);
    let pixels = img.channels * patch * patch;
    let mut out = Matrix::zeros(gh * gw, pixels);
    for py in 0..gh {
        for px in 0..gw {
            let row = out.row_mut(py * gw + px);
            let mut k = 0;
            for c in 0..img.channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        row[k] = img.get(c, py * patch + dy, px * patch + dx);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Strided patch projection followed by inference-mode BatchNorm.
pub fn patch_embed(img: &ImageTensor, patch: usize, stem: &StemWeights) -> Result<FeatureMatrix> {
    let patches = patchify(img, patch)?;
    if stem.proj.rows() != patches.cols() {
        return Err(Error::SizeMismatch(format!(
            "stem projection expects {} pixels per patch, image patches have {}",
            stem.proj.rows(),
            patches.cols()
        )));
    }
    batch_norm_inference(&patches.matmul(&stem.proj)?, &stem.bn)
}

pub fn add_positional(x: &FeatureMatrix, table: &Matrix) -> Result<FeatureMatrix> {
    x.add(table)
}

/// 2x2 max pooling over an `height x width` token grid.
pub fn downsample_maxpool(x: &FeatureMatrix, height: usize, width: usize) -> Result<FeatureMatrix> {
    if height * width != x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} tokens do not form a {height}x{width} grid",
            x.rows()
        )));
    }
    if !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(Error::OddGrid { height, width });
    }
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Matrix::zeros(oh * ow, x.cols());
    for y in 0..oh {
        for xx in 0..ow {
            let dst = out.row_mut(y * ow + xx);
            dst.copy_from_slice(x.row(2 * y * width + 2 * xx));
            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                let src = x.row((2 * y + dy) * width + 2 * xx + dx);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = d.max(s);
                }
            }
        }
    }
    Ok(out)
}

/// Pyramid stage boundary: pool the square grid, then widen channels.
pub fn stage_transition(x: &FeatureMatrix, side: usize, proj: &Matrix) -> Result<FeatureMatrix> {
    downsample_maxpool(x, side, side)?.matmul(proj)
}

/// Mean over nodes, then a linear map to class scores.
pub fn classify_head(x: &FeatureMatrix, head: &Matrix) -> Result<Vec<f32>> {
    if head.rows() != x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "head expects D={}, features have D={}",
            head.rows(),
            x.cols()
        )));
    }
    let mut mean = vec![0.0f32; x.cols()];
    for r in 0..x.rows() {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let n = x.rows() as f32;
    mean.iter_mut().for_each(|m| *m /= n);
    let pooled = Matrix::new(1, x.cols(), mean)?;
    Ok(pooled.matmul(head)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::BatchNormParams;

    fn ramp_image(size: usize) -> ImageTensor {
        let n = 3 * size * size;
        ImageTensor::new(3, size, size, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn single_patch_identity() {
        let img = ramp_image(16);
        let stem = StemWeights {
            proj: Matrix::identity(768),
            bn: BatchNormParams::identity(768),
        };
        let x = patch_embed(&img, 16, &stem).unwrap();
        assert_eq!(x.shape(), (1, 768));
        assert_eq!(x.row(0), img.data());
    }

    #[test]
    fn token_count_224() {
        let img = ramp_image(224);
        let stem = StemWeights {
            proj: Matrix::zeros(768, 8),
            bn: BatchNormParams::identity(8),
        };
        let x = patch_embed(&img, 16, &stem).unwrap();
        assert_eq!(x.rows(), 196);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_order_is_row_major() {
        let img = ramp_image(4);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), (4, 12));
        // patch (0, 1), channel 0, pixel (1, 0) = image (0, 1, 2)
        assert_eq!(p.get(1, 2), img.get(0, 1, 2));
        assert!(patchify(&img, 3).is_err());
    }

    #[test]
    fn image_values_are_range_checked() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn positional_add() {
        let x = Matrix::from_fn(2, 2, |r, c| (r + c) as f32);
        let z = Matrix::zeros(2, 2);
        assert_eq!(add_positional(&x, &z).unwrap(), x);
        assert_eq!(add_positional(&z, &x).unwrap(), x);
        assert!(add_positional(&x, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn maxpool_window() {
        let x = Matrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(downsample_maxpool(&x, 2, 2).unwrap().data(), &[4.0]);
        let c = Matrix::from_fn(16, 3, |_, _| 0.5);
        let pooled = downsample_maxpool(&c, 4, 4).unwrap();
        assert_eq!(pooled.rows(), 4);
        assert!(pooled.data().iter().all(|&v| v == 0.5));
        assert_eq!(
            downsample_maxpool(&Matrix::zeros(9, 1), 3, 3),
            Err(Error::OddGrid {
                height: 3,
                width: 3
            })
        );
    }

    #[test]
    fn head_on_single_node() {
        let x = Matrix::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(classify_head(&x, &Matrix::identity(3)).unwrap(), vec![0.5, -1.0, 2.0]);
        assert_eq!(classify_head(&x, &Matrix::zeros(3, 5)).unwrap(), vec![0.0; 5]);
        assert!(classify_head(&x, &Matrix::zeros(2, 5)).is_err());
    }
}
