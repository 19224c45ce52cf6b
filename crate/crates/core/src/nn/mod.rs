//! Minimal CPU neural-network toolkit: tape autograd, convolution kernels,
//! parameter stores and optimizers.

mod graph;
pub mod kernels;
mod layers;
mod optim;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use layers::{normal_tensor, Conv2d, Init, Linear};
pub use optim::{Adadelta, AdadeltaConfig, Adam, AdamConfig};
pub use params::ParamStore;
