//! Perception: cell patches, the shape recognizer trained from axioms A1–A3,
//! agent self-identification and the reward predictor.

mod patches;
mod recognizer;
mod reward;

use thiserror::Error;

use crate::logic::LogicError;
use crate::tensor::TensorError;

pub use patches::{split_patches, PatchMemory};
pub use recognizer::{
    axioms_from_scores, classify, recognizer_axioms, recognizer_loss, shape_types, RecognizerKb,
    RecognizerNet, CLASSES,
};
pub use reward::{
    count_shapes, predicted_rewards_all_actions, reward_loss, AgentIdentifier, BoardView, RewardNet,
};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("{0}")]
    Shape(String),
    #[error("patch memory is empty")]
    EmptyMemory,
    #[error("agent class not identified; reasoning unavailable")]
    ReasoningUnavailable,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = PerceptionError> = std::result::Result<T, E>;
