//! Differentiable fuzzy first-order logic with Product Real Logic semantics.
//!
//! Formulas are built programmatically, type-checked against a [`Signature`]
//! and evaluated on a [`Tape`](crate::tensor::Tape) under a [`GroundingEnv`],
//! so every truth degree is differentiable with respect to whatever produced
//! its groundings.

mod eval;
mod formula;
mod ops;
mod signature;

use thiserror::Error;

use crate::tensor::TensorError;

pub use eval::{eval_truth, GroundingEnv, SymbolFn, Truth};
pub use formula::{Formula, Guard, Quantified, QuantifierBuilder, QuantifierKind, Term, DEFAULT_P};
pub use ops::{
    aggregate_exists, aggregate_forall, and, connective, iff, implies, kb_loss, not, or, sat_agg,
    Connective, DEFAULT_P_SAT,
};
pub use signature::{Signature, TypeError};

#[derive(Debug, Error)]
pub enum LogicError {
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("{symbol} takes {expected} arguments, got {actual}")]
    Arity {
        symbol: String,
        expected: usize,
        actual: usize,
    },
    #[error("type error: {0}")]
    Type(TypeError),
    #[error("{what}: truth degree {value} at index {index} is outside [0, 1]")]
    OutOfRange {
        what: String,
        index: usize,
        value: f64,
    },
    #[error("variable `{0}` has an empty batch")]
    EmptyBatch(String),
    #[error("{group} pairs batches of different lengths {sizes:?}")]
    DiagLength { group: String, sizes: Vec<usize> },
    #[error("guard leaves no instance for the existential in `{0}`")]
    VacuousExists(String),
    #[error("cannot aggregate an empty knowledge base")]
    EmptyKnowledgeBase,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = LogicError> = std::result::Result<T, E>;
