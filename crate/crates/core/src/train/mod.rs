//! Training: the masked negative log-likelihood, Adam, the epoch loop with
//! checkpoints, and evaluation.

mod adam;
mod loss;
mod run;

pub use adam::{read_optimizer, write_optimizer, AdamConfig, AdamState};
pub use loss::{loss_and_gradients, record_loss, smlm_loss, train_step, BatchItem};
pub use run::{evaluate, is_validation, run_training, EpochMetrics, RunOptions, TrainConfig, TrainReport};

use crate::net::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite loss; offending batch:\n{0}")]
    NonFinite(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<crate::numerics::NumericsError> for TrainError {
    fn from(e: crate::numerics::NumericsError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::score::ScoreError> for TrainError {
    fn from(e: crate::score::ScoreError) -> Self {
        TrainError::Model(e.into())
    }
}
