//! Local symmetry discovery: train chart predictors, learn a Lie algebra basis
//! that makes them equivariant, then find and filter discrete coset representatives.

pub mod autodiff;
pub mod discovery;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lie;
pub mod linalg;
pub mod optim;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
