//! Nonlinearities: ReLU, exact GELU and a 64-segment piecewise-linear GELU.

use crate::config::Activation;
use crate::tensor::Matrix;

const PWL_LO: f32 = -8.0;
const PWL_HI: f32 = 8.0;
const PWL_SEGMENTS: usize = 64;
const PWL_STEP: f32 = (PWL_HI - PWL_LO) / PWL_SEGMENTS as f32;

/// Exact GELU sampled at `-8 + 0.25 * i`, with the endpoints pinned to 0
/// and 8 so the approximation joins the saturated tails continuously.
#[rustfmt::skip]
const PWL_KNOTS: [f32; PWL_SEGMENTS + 1] = [
    0.000000000e+00,
    -3.570_754_8e-14,
    -2.393_918_4e-13,
    -1.510_819_2e-12,
    -8.958_667e-12,
    -4.989_771e-11,
    -2.610_399e-10,
    -1.282_664_6e-9,
    -5.919_525_8e-9,
    -2.565_749_2e-8,
    -1.044_425_9e-7,
    -3.992_604_1e-7,
    -1.433_257_8e-6,
    -4.831_145_4e-6,
    -1.528_952_8e-5,
    -4.542_623_4e-5,
    -1.266_849_7e-4,
    -3.315_648e-4,
    -8.142_018e-4,
    -1.875_331_4e-3,
    -4.049_694e-3,
    -8.194_349e-3,
    -1.552_416_3e-2,
    -2.750_506_4e-2,
    -4.550_026_4e-2,
    -7.010_352_6e-2,
    -1.002_108e-1,
    -1.320_622_1e-1,
    -1.586_552_6e-1,
    -1.699_705_1e-1,
    -1.542_687_7e-1,
    -1.003_234_2e-1,
    0.000000000e+00,
    1.496_765_8e-1,
    3.457_312_3e-1,
    5.800_295e-1,
    8.413_448e-1,
    1.117_937_8,
    1.399_789_2,
    1.679_896_5,
    1.954_499_7,
    2.222_494_8,
    2.484_475_9,
    2.741_805_6,
    2.995_950_2,
    3.248_124_6,
    3.499_185_8,
    3.749_668_4,
    3.999_873_4,
    4.249_954_7,
    4.499_984_7,
    4.749_995,
    4.999_998_6,
    5.249_999_5,
    5.5,
    5.75,
    6.0,
    6.25,
    6.5,
    6.75,
    7.0,
    7.25,
    7.5,
    7.75,
    8.0
];

/// Piecewise-linear GELU: exactly 0 below -8, exactly `x` above 8, linear
/// interpolation between 0.25-spaced knots in between.
pub fn gelu_pwl(x: f32) -> f32 {
    if x <= PWL_LO {
        return 0.0;
    }
    if x >= PWL_HI {
        return x;
    }
    let pos = (x - PWL_LO) / PWL_STEP;
    let seg = (pos as usize).min(PWL_SEGMENTS - 1);
    let frac = pos - seg as f32;
    let (a, b) = (PWL_KNOTS[seg], PWL_KNOTS[seg + 1]);
    a + (b - a) * frac
}

/// `x * Phi(x)` evaluated in f64.
pub fn gelu_exact(x: f32) -> f32 {
    let x = f64::from(x);
    (0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))) as f32
}

#[inline]
pub fn relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::GeluPwl => gelu_pwl(x),
            Activation::GeluExact => gelu_exact(x),
            Activation::Relu => relu(x),
        }
    }

    pub fn apply_matrix(self, m: &Matrix) -> Matrix {
        m.map(|v| self.apply(v))
    }
}
