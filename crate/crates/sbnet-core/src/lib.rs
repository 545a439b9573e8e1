//! Natural-language vehicle retrieval.
//!
//! A text query (three noisy descriptions of one vehicle) is matched against
//! candidate tracks by fusing a transformer text encoder with a convolutional
//! frame encoder through co-attention, predicting a language-conditioned
//! box mask, and scoring candidates with mask/embedding/attribute agreement.
//! Everything runs on a small tape-based autodiff engine written here.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod runner;
pub mod scalar;
pub mod scoring;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision tensor.
pub type Tensor = tensor::TensorBase<f32>;
/// Oracle-precision tensor (finite-difference reference).
pub type Tensor64 = tensor::TensorBase<f64>;

pub use graph::{Graph, Mode, Var};
pub use params::{ParamId, ParamSet};
