//! Affective-motion imaging and the AffectiveNet multi-scale CNN for
//! micro-expression recognition, with leave-one-subject-out and
//! cross-dataset evaluation.

pub mod affnet;
pub mod ami;
pub mod error;
pub mod evalharness;
pub mod io;
pub mod ndnn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor, the training default.
pub type Tensor32 = ndnn::Tensor<f32>;
/// Double-precision tensor, used for gradient checks.
pub type Tensor64 = ndnn::Tensor<f64>;
pub type Network32 = affnet::Network<f32>;
pub type Network64 = affnet::Network<f64>;
pub type AffectiveImage32 = ami::AffectiveImage<f32>;
pub type AffectiveImage64 = ami::AffectiveImage<f64>;
