//! Small from-scratch classifiers: softmax regression and rectifier MLPs
//! trained with minibatch cross-entropy in 64-bit floats.

mod checkpoint;
mod gradcheck;
mod model;
mod sampler;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{
    format_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{gradient_check, GradientProbe};
pub use model::{predict_labels, predict_proba, Architecture, ClassifierModel};
pub use sampler::WeightedSampler;
pub use train::{train_erm, Budget, Optimizer, TrainConfig, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {got} features, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },
    #[error("all sampling weights are zero")]
    AllZeroWeights,
    #[error("sampling weight {value} at index {index} is negative or non-finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint line {line}: {message}")]
    Format { line: usize, message: String },
}
