//! Dueling deep Q-learning: network, replay memory and temporal-difference
//! trainer.

mod network;
mod replay;
mod trainer;

use thiserror::Error;

use crate::tensor::TensorError;

pub use network::{combine_values, dueling_combine, QNetConfig, QNetwork};
pub use replay::{ReplayMemory, Transition};
pub use trainer::{
    epsilon_at, select_action, stack_observations, sync_target, td_loss, DqnLearner,
    TrainerConfig,
};

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("no allowed action to choose from")]
    EmptyMask,
    #[error("replay holds {have} transitions, need {need}")]
    InsufficientReplay { have: usize, need: usize },
    #[error("non-finite loss {0}")]
    NonFinite(f64),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
