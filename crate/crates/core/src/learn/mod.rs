//! Differentiable-computation substrate: tensors, layer kernels,
//! reverse-mode gradients and the Adam optimizer.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use kernels::Exec;
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
