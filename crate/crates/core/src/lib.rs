pub mod autodiff;
pub mod error;
pub mod numeric;

pub use error::{Error, Result};
pub mod encoder;
pub mod params;
pub mod data;
pub mod eval;
pub mod retrieval;
pub mod trainer;
pub mod experiment;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type EncoderWeights32 = encoder::EncoderWeights<f32>;
pub type EncoderWeights64 = encoder::EncoderWeights<f64>;
