//! Reverse-mode differentiation over a static graph of tensor operations.

mod conv;
mod expm;
mod graph;
mod sample;

pub use expm::matexp;
pub use graph::{Gradients, Graph, NodeId};
pub use sample::grid_sample;

pub(crate) use expm::{matexp_backward, matexp_forward};
