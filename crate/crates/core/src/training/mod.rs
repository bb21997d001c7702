//! Class weighting, the weighted loss, Adam, input normalization, and the
//! epoch loop with least-validation-loss checkpoint selection.

mod adam;
mod examples;
mod history;
mod loss;
mod normalize;
mod trainer;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use examples::{assemble_batch, Examples, InMemory, OnDisk, CLASS_NEGATIVE, CLASS_POSITIVE};
pub use history::{select_checkpoint, EpochRecord, TrainHistory};
pub use loss::{class_weights, weighted_cross_entropy, ClassWeights};
pub use normalize::{normalize_image, Normalization, NormalizationMode};
pub use trainer::{predict, train, TrainConfig, TrainOutcome};

use crate::data::DataError;
use crate::network::NetworkError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate cohort: {n_p} positive and {n_n} negative cases (both must be at least 1)")]
    DegenerateCohort { n_p: usize, n_n: usize },
    #[error("label is not a one-hot vector: {0:?}")]
    MalformedOneHot(Vec<f64>),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("adam: {0}")]
    ShapeMismatch(String),
    #[error("training history is empty")]
    EmptyHistory,
    #[error("{saved} checkpoints saved for {epochs} epochs")]
    CheckpointCount { saved: usize, epochs: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
