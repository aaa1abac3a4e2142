//! The ablation harness: the five experimental conditions, the agent that
//! wires perception, reasoning and Q-learning together, the train/evaluate
//! loop, metrics and reports.

mod agent;
mod metrics;
mod report;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::{DqnError, QNetConfig, TrainerConfig};
use crate::env::{EnvConfig, EnvError};
use crate::guidance::{FilterConfig, ReasonerConfig};
use crate::logic::LogicError;
use crate::perception::PerceptionError;
use crate::tensor::TensorError;

pub use agent::{Agent, Perceived, StepLosses};
pub use metrics::{
    evaluate, read_metrics, smooth, write_metrics, EpisodeResult, EpochMetrics, EvalSummary, Policy,
    METRICS_HEADER,
};
pub use report::{emit_outputs, load_condition_runs, smoothed_mean_at, summary_table, write_plot, SummaryRow};
pub use run::{episode_seed, resume_run, run_experiment, run_single, RunOutcome, SeedPurpose};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
    #[error("non-finite loss in epoch {epoch}; diagnostic snapshot at {}", snapshot.display())]
    NonFinite { epoch: usize, snapshot: PathBuf },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// The five ablation conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "dueldqn")]
    DuelDqn,
    #[serde(rename = "symdqn")]
    SymDqn,
    #[serde(rename = "symdqn-ar")]
    SymDqnAr,
    #[serde(rename = "symdqn-af")]
    SymDqnAf,
    #[serde(rename = "symdqn-ar-af")]
    SymDqnArAf,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::DuelDqn,
        Condition::SymDqn,
        Condition::SymDqnAr,
        Condition::SymDqnAf,
        Condition::SymDqnArAf,
    ];

    /// Shape recognizer and reward predictor are active.
    pub fn symbolic(self) -> bool {
        self != Condition::DuelDqn
    }

    pub fn reasoner(self) -> bool {
        matches!(self, Condition::SymDqnAr | Condition::SymDqnArAf)
    }

    pub fn filter(self) -> bool {
        matches!(self, Condition::SymDqnAf | Condition::SymDqnArAf)
    }

    /// Command-line and directory name.
    pub fn slug(self) -> &'static str {
        match self {
            Condition::DuelDqn => "dueldqn",
            Condition::SymDqn => "symdqn",
            Condition::SymDqnAr => "symdqn-ar",
            Condition::SymDqnAf => "symdqn-af",
            Condition::SymDqnArAf => "symdqn-ar-af",
        }
    }

    /// Name used in tables and plots.
    pub fn label(self) -> &'static str {
        match self {
            Condition::DuelDqn => "DuelDQN",
            Condition::SymDqn => "SymDQN",
            Condition::SymDqnAr => "SymDQN(AR)",
            Condition::SymDqnAf => "SymDQN(AF)",
            Condition::SymDqnArAf => "SymDQN(AR,AF)",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Condition {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.slug() == s)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown condition `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub condition: Condition,
    pub epochs: usize,
    pub train_episodes_per_epoch: usize,
    pub eval_episodes_per_epoch: usize,
    pub runs: usize,
    pub base_seed: u64,
    /// Exploration kept during evaluation episodes.
    pub eval_epsilon: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Let the reward loss train the recognizer through its input.
    pub reward_grad_to_recognizer: bool,
    pub env: EnvConfig,
    pub network: QNetConfig,
    pub trainer: TrainerConfig,
    pub reasoner: ReasonerConfig,
    pub filter: FilterConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            condition: Condition::SymDqn,
            epochs: 250,
            train_episodes_per_epoch: 50,
            eval_episodes_per_epoch: 50,
            runs: 5,
            base_seed: 0,
            eval_epsilon: 0.05,
            checkpoint_every: 50,
            reward_grad_to_recognizer: false,
            env: EnvConfig::default(),
            network: QNetConfig::default(),
            trainer: TrainerConfig::default(),
            reasoner: ReasonerConfig::default(),
            filter: FilterConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.train_episodes_per_epoch == 0 || self.eval_episodes_per_epoch == 0 || self.runs == 0
        {
            return Err(HarnessError::Invalid("epoch, episode and run counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(HarnessError::Invalid(format!("eval_epsilon {} outside [0, 1]", self.eval_epsilon)));
        }
        if self.filter.threshold < 0.0 {
            return Err(HarnessError::Invalid("filter threshold must be non-negative".into()));
        }
        self.env.validate()?;
        self.trainer.validate()?;
        self.reasoner.validate().map_err(HarnessError::Invalid)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Directory holding this condition's metrics and checkpoints.
    pub fn condition_dir(&self) -> PathBuf {
        self.output_dir.join(self.condition.slug())
    }
}
