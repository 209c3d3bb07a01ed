//! Shallow temporal convolutional network over pose features, its trainer,
//! and the cross-validation and ablation harness built on top of it.

pub mod ablation;
pub mod adam;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod network;
pub mod spec;
pub mod train;

pub use model::ModelWeights;
pub use spec::NetworkSpec;
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training set contains a single class")]
    SingleClassDataset,
    #[error("too few samples: {n} (need at least {needed})")]
    TooFewSamples { n: usize, needed: usize },
    #[error("weights file version {found}, expected {expected}")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("weights checksum mismatch")]
    ChecksumFailure,
    #[error("malformed weights: {0}")]
    MalformedWeights(String),
    #[error("malformed results store: {0}")]
    MalformedResults(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
