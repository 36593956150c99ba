//! Differentiable building blocks: tensors, convolution, fully connected,
//! batch normalization, ReLU, softmax cross-entropy and SGD.
//!
//! Every layer is a pair of free functions (`forward`, `*_backward`) over a
//! plain parameter struct, so the same code serves training (`f32`) and
//! finite-difference gradient checking (`f64`).

mod activation;
mod batchnorm;
pub mod checkpoint;
mod conv;
mod fc;
pub mod gradcheck;
pub mod init;
mod loss;
mod sgd;
mod tensor;

pub use activation::{relu, relu_backward};
pub use batchnorm::{
    batchnorm, batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache,
    BatchNormForward, BatchNormGrads, BatchNormState, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, conv2d_backward_params, same_output_size, ConvGrads, ConvLayer};
pub use fc::{fc, fc_backward, FcGrads, FcLayer};
pub use loss::{softmax, softmax_cross_entropy};
pub use sgd::{sgd_step, sgd_update};
pub use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}
