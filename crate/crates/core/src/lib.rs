pub mod benchmark;
pub mod classifier;
pub mod container;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod imaging;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod translation;

pub use error::{Error, Result};
pub use tensor::Tensor;
