use rand::Rng;

use crate::ndnn::{ConvLayer, FcLayer, Tensor};
use crate::scalar::Scalar;

/// Uniform in `±sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

pub fn init_conv<T: Scalar, R: Rng>(
    size: usize,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    rng: &mut R,
) -> ConvLayer<T> {
    ConvLayer {
        kernel: he_uniform(
            &[size, size, in_channels, out_channels],
            size * size * in_channels,
            rng,
        ),
        bias: Tensor::zeros(&[out_channels]),
        stride,
    }
}

pub fn init_fc<T: Scalar, R: Rng>(din: usize, dout: usize, rng: &mut R) -> FcLayer<T> {
    FcLayer {
        weights: he_uniform(&[din, dout], din, rng),
        bias: Tensor::zeros(&[dout]),
    }
}
