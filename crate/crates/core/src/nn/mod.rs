//! Layers, the conditional U-Net noise estimator, Adam and checkpoints.

mod adam;
pub mod checkpoint;
mod embedding;
mod params;
mod unet;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{cosine_lr, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointError, OptimizerState};
pub use embedding::{time_embedding, time_embeddings};
pub use params::{Bindings, Parameter, ParameterSet};
pub use unet::{ModelConfig, NoiseEstimator};

use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter `{0}` missing")]
    MissingParameter(String),
    #[error("unexpected parameter `{0}`")]
    UnknownParameter(String),
    #[error("spatial extent {extent} is not divisible by {factor}")]
    IndivisibleExtent { extent: usize, factor: usize },
    #[error("expected {expected} image channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("noisy input {noisy:?} and condition {cond:?} differ in shape")]
    ConditionShape { noisy: Vec<usize>, cond: Vec<usize> },
    #[error("{got} step indices for a batch of {batch}")]
    BatchMismatch { got: usize, batch: usize },
    #[error("time embedding dimension {0} must be even and positive")]
    OddEmbeddingDim(usize),
}
