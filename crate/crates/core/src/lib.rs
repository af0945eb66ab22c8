//! Activity-sparsity regularization for dense networks, conversion to
//! rate-coded spiking networks, and zero-skipping efficiency accounting.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the `f32` storage used for training and simulation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod regularizer;
pub mod scalar;
pub mod snn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelKind, ModelSpec};
pub use regularizer::{Normalization, RegKind, RegSpec};
pub use scalar::Scalar;

/// Storage scalar used by the training pipeline.
pub type Real = f32;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Params32 = model::ModelParams<f32>;
