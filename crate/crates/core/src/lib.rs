//! Gated cross-attention laboratory for dual-domain sequential recommenders.
//!
//! The engine is generic over the element type ([`Scalar`]); the aliases
//! below fix it to `f64`, which is what experiments and checks use.

pub mod attention;
pub mod backbone;
pub mod data;
pub mod error;
pub mod gca;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Parameter = param::Parameter<f64>;
pub type ParamStore = param::ParamStore<f64>;
pub type Adam = optim::Adam<f64>;
pub type Model = backbone::Model<f64>;
