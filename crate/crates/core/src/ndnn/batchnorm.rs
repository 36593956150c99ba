//! Batch normalization over the trailing (channel) dimension.
//!
//! Statistics are taken over every leading dimension, so a `[N, H, W, C]`
//! activation is normalized per channel across batch and space, and an
//! `[N, C]` feature matrix per feature across the batch.

use crate::error::{Error, Result};
use crate::ndnn::{Mode, Tensor};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    /// Weight kept by the running statistics on each update.
    pub momentum: T,
}

/// Saved by a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormForward<T> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

impl<T: Scalar> BatchNormState<T> {
    /// Unit scale, zero shift, zero mean and unit variance running statistics.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            scale: Tensor::full(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            epsilon: T::lit(DEFAULT_EPSILON),
            momentum: T::lit(DEFAULT_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Learnable parameters only (scale and shift).
    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }

    /// Exponential moving average update of the running statistics.
    pub fn update_running(&mut self, mean: &[T], var: &[T]) {
        let keep = self.momentum;
        let take = T::one() - keep;
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = (keep * *r + take * v).max(T::zero());
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape().len() < 2 || input.channels() != self.channels() {
            return Err(Error::invalid(format!(
                "batchnorm over {} channels got input {:?}",
                self.channels(),
                input.shape()
            )));
        }
        Ok(())
    }
}

/// Train-mode forward using batch statistics; leaves the running statistics untouched.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<BatchNormForward<T>> {
    state.check_input(input)?;
    if input.batch() < 2 {
        return Err(Error::invalid(
            "train-mode batch normalization needs a batch of at least 2",
        ));
    }
    let c = state.channels();
    let count = T::from_usize_lossy(input.len() / c);
    let mut mean = vec![T::zero(); c];
    for px in input.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![T::zero(); c];
    for px in input.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.epsilon).sqrt()).collect();

    let mut normalized = Tensor::zeros(input.shape());
    let mut output = Tensor::zeros(input.shape());
    let (scale, shift) = (state.scale.data(), state.shift.data());
    for ((src, xn), out) in input
        .data()
        .chunks_exact(c)
        .zip(normalized.data_mut().chunks_exact_mut(c))
        .zip(output.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let z = (src[ch] - mean[ch]) * inv_std[ch];
            xn[ch] = z;
            out[ch] = scale[ch] * z + shift[ch];
        }
    }
    Ok(BatchNormForward {
        output,
        cache: BatchNormCache {
            normalized,
            inv_std,
        },
        batch_mean: mean,
        batch_var: var,
    })
}

/// Inference-mode forward using the running statistics.
pub fn batchnorm_infer<T: Scalar>(input: &Tensor<T>, state: &BatchNormState<T>) -> Result<Tensor<T>> {
    state.check_input(input)?;
    let c = state.channels();
    let (scale, shift) = (state.scale.data(), state.shift.data());
    let (mean, var) = (state.running_mean.data(), state.running_var.data());
    let factor: Vec<T> = (0..c)
        .map(|ch| scale[ch] / (var[ch] + state.epsilon).sqrt())
        .collect();
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] = (px[ch] - mean[ch]) * factor[ch] + shift[ch];
        }
    }
    Ok(out)
}

/// Mode-dispatching forward; train mode also folds the batch statistics into
/// the running averages.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => {
            let fwd = batchnorm_train(input, state)?;
            state.update_running(&fwd.batch_mean, &fwd.batch_var);
            Ok(fwd.output)
        }
        Mode::Infer => batchnorm_infer(input, state),
    }
}

/// Backward pass of the train-mode forward.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
) -> Result<BatchNormGrads<T>> {
    grad_out.expect_shape(cache.normalized.shape())?;
    let c = state.channels();
    let m = T::from_usize_lossy(grad_out.len() / c);
    let scale = state.scale.data();
    let mut grad_scale = Tensor::zeros(&[c]);
    let mut grad_shift = Tensor::zeros(&[c]);
    for (g, z) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.normalized.data().chunks_exact(c))
    {
        for ch in 0..c {
            grad_scale.data_mut()[ch] += g[ch] * z[ch];
            grad_shift.data_mut()[ch] += g[ch];
        }
    }
    // dx = inv_std / m * (m * dz - sum(dz) - z * sum(dz * z)),  dz = dy * scale
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let (gs, gb) = (grad_scale.data(), grad_shift.data());
    for ((dst, g), z) in grad_in
        .data_mut()
        .chunks_exact_mut(c)
        .zip(grad_out.data().chunks_exact(c))
        .zip(cache.normalized.data().chunks_exact(c))
    {
        for ch in 0..c {
            let sum_dz = gb[ch] * scale[ch];
            let sum_dz_z = gs[ch] * scale[ch];
            dst[ch] = cache.inv_std[ch] / m * (m * g[ch] * scale[ch] - sum_dz - z[ch] * sum_dz_z);
        }
    }
    Ok(BatchNormGrads {
        input: grad_in,
        scale: grad_scale,
        shift: grad_shift,
    })
}
