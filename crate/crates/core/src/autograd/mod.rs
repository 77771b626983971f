//! Minimal reverse-mode differentiation over 5-axis tensors: exactly the
//! kernels the dense encoder-decoder needs.

pub mod check;
mod conv;
mod graph;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::{DiffTensor, Shape};
