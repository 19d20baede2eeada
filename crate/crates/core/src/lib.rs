//! Slice synthesis for anisotropic volumes by interpolating autoencoder
//! latent codes.
//!
//! The crate is generic over the floating point type where the numerics
//! allow it; the aliases below pin the common instantiations.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod interp;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod volume;

pub use error::{AsiError, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
