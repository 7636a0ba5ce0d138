//! Score and loss assembly, optimisation, the training loop and checkpoints.

mod checkpoint;
mod losses;
mod model;
mod optimizer;
mod train;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::domain::{DomainError, Pair};
use crate::eval::EvalError;
use crate::io::IoError;
use crate::numerics::NumericsError;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use losses::{batch_losses, classification_loss, total_loss, BatchLosses, CompCandidates, LossContext, LossParts};
pub use model::{argmax, classification_scores, inference_score, DefaModel, LossWeights, ModelConfig, ScoreBundle};
pub use optimizer::{Adam, AdamConfig};
pub use train::{epoch_batches, logs_to_csv, train, EpochLog, TrainConfig, TrainOutcome, ValMetrics};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    EmptyDataset(&'static str),
    #[error("{component} became non-finite at epoch {epoch}, step {step}")]
    NonFinite {
        component: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("training label {0} is not a seen composition")]
    NotSeen(Pair),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Eval(Box<EvalError>),
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Eval(Box::new(e))
    }
}
