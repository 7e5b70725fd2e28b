//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Bound, Checkpoint, ParamId, ParamStore, Parameter, CHECKPOINT_FORMAT_VERSION};
pub use tensor::Tensor;
