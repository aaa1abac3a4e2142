//! Dueling deep Q-learning augmented with differentiable fuzzy-logic modules,
//! trained and evaluated on a 5x5 shapes gridworld.

pub mod tensor;
pub mod logic;
pub mod env;
pub mod dqn;
pub mod perception;
pub mod guidance;
pub mod harness;
