//! Error type shared by every simulator module.

use thiserror::Error;

/// Errors produced by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter vectors (or a vector and an architecture) disagree on length.
    #[error("parameter length mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// A NaN or infinite value showed up where only finite numbers are allowed.
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    /// A model in the pool went non-finite during a run.
    #[error("model {model} has non-finite parameters after round {round}")]
    NonFiniteModel { round: usize, model: usize },

    /// Cosine similarity is undefined when either vector is all-zero.
    #[error("similarity is undefined for an all-zero vector")]
    ZeroVector,

    /// An aggregation was asked to average an empty model list.
    #[error("model pool is empty")]
    EmptyPool,

    /// Collaborative selection needs at least two models to pick from.
    #[error("model pool holds {size} model(s); collaborator selection needs at least 2")]
    PoolTooSmall { size: usize },

    /// A client was dispatched a model but owns no training samples.
    #[error("client shard is empty")]
    EmptyShard,

    /// Loss/gradient evaluation over an empty batch.
    #[error("batch is empty")]
    EmptyBatch,

    /// Invalid configuration value; the message names the offending field.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dirichlet partitioning could not satisfy the per-client minimum.
    #[error(
        "partitioning failed after {attempts} attempts: \
         could not give every client at least {min_per_client} samples"
    )]
    PartitionFailed { attempts: usize, min_per_client: usize },

    /// Malformed input data; carries the 1-based row number.
    #[error("row {row}: {message}")]
    InputFormat { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
