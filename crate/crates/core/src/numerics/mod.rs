//! Tensors, the gradient tape, parameter storage and the optimizer.

pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use optim::Adam;
pub use params::{Param, ParameterStore};
pub use tensor::{matmul, Real, Tensor};
