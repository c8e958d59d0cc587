//! Outlier-gated melanoma classifier.

mod loss;
mod network;
mod optim;
mod train;

use thiserror::Error;

pub use loss::{binary_cross_entropy, focal_loss, focal_loss_grad_logit, FocalParams, EPS};
pub use network::{
    accumulate_gradients, backward, forward, forward_with, sigmoid, trace_loss, ForwardTrace,
    Gradients, Injection, Layer, ModelParams,
};
pub use optim::RAdam;
pub use train::{
    predict, train, train_split, write_history_csv, Checkpoint, EpochRecord, OutlierScores, ScoreEntry, TrainConfig,
    TrainOutcome, Trainable, Weighting,
};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("embedding dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("no labeled training records")]
    NoLabeledRecords,
    #[error("no outlier score for lesion '{0}'")]
    MissingScore(String),
    #[error("outlier score {score} for lesion '{lesion_id}' outside [0, 2]")]
    InvalidScore { lesion_id: String, score: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Folds(#[from] crate::evaluation::EvalError),
}
