//! Character embeddings learned from glyph images, with lookup-table
//! baselines, a GRU sequence classifier and the tools to compare them.

pub mod analysis;
pub mod classifier;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod fusion;
pub mod glyph;
pub mod prob;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type Model64 = classifier::Model<f64>;
pub type Model32 = classifier::Model<f32>;
