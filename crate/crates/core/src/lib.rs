//! Domain-adaptive wind power classification.
//!
//! Hourly generation and weather data are merged, windowed and binned into
//! capacity-factor classes. A small convolutional classifier is trained on a
//! source region and then adapted to a target region by fine-tuning only its
//! fully connected head.
//!
//! The numerical core ([`nn`], [`train`], [`adapt`]) is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the precision.

pub mod adapt;
pub mod error;
pub mod experiments;
pub mod features;
pub mod ingest;
pub mod labeling;
pub mod nn;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision network parameters (the default).
pub type Model = nn::ModelParams<f64>;
/// Single-precision network parameters.
pub type Model32 = nn::ModelParams<f32>;
pub type Gradients = nn::Gradients<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type Tensor = nn::Tensor<f64>;
