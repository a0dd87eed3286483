use thiserror::Error;

use crate::kg::{KgError, RelationId};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("relation {relation} has {have} triplets, needs {need}")]
    InsufficientTriplets {
        relation: RelationId,
        have: usize,
        need: usize,
    },
    #[error("candidate pool has {have} entities, needs {need}")]
    CandidatePool { have: usize, need: usize },
    #[error("no eligible negative tail among the candidates")]
    NoNegative,
    #[error("vocabulary too small to corrupt a context")]
    CannotCorrupt,
    #[error("empty context for an anchor triplet")]
    EmptyContext,
    #[error("empty reference set")]
    EmptyReferences,
    #[error("{positives} positive scores but {negatives} negative scores")]
    PairMismatch { positives: usize, negatives: usize },
    #[error("true tail missing from the candidate list")]
    MissingTruth,
    #[error("non-finite loss at step {step}")]
    Divergence { step: u64 },
    #[error("no tasks to train on")]
    NoTasks,
    #[error("metric invariant violated: {0}")]
    Metrics(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
