//! Few-shot knowledge graph completion by hierarchical relational learning.
//!
//! Context-level contrastive learning, a set-attention meta relation
//! learner and rank-one projected translational scoring, trained with a
//! MAML-style inner/outer loop.

pub mod tensor;

pub use tensor::{Graph, ParamStore, Tensor, TensorError, Var};
pub mod context;
pub mod eval;
pub mod kg;
pub mod meta;
pub mod model;
pub mod task;
pub mod trainer;

mod error;
pub use error::{Error, Result};
