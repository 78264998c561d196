//! Minimal deterministic dense-tensor engine with reverse-mode autodiff.

pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use tensor::{DType, Tensor};
