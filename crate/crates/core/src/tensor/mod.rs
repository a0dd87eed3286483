//! Numerical substrate: dense tensors, reverse-mode autodiff, Adam, seeded
//! random streams, gradient checking and the tensor file format.

mod adam;
mod array;
mod file;
mod gradcheck;
mod graph;
mod params;
pub mod rng;

pub use adam::{adam_step, AdamState};
pub use array::{concat, dot, Tensor};
pub use file::{TensorFile, FORMAT_VERSION};
pub use gradcheck::finite_diff_check;
pub use graph::{Graph, Var};
pub use params::ParamStore;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("missing tensor {0}")]
    MissingParam(String),
    #[error("{0}")]
    Invalid(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
