//! Policy shaping from predicted rewards: the action reasoner (axiom A4 as an
//! auxiliary loss on Q-values) and the evaluation-time action filter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{select_action, DqnError};
use crate::logic::{eval_truth, Formula, GroundingEnv, Guard, LogicError, Term, DEFAULT_P};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Steepness of the fuzzy `q1 > q2`.
    pub alpha: f64,
    pub p: f64,
    pub weight: f64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            p: DEFAULT_P,
            weight: 1.0,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha > 0.0 && self.p >= 1.0 && self.weight >= 0.0 {
            Ok(())
        } else {
            Err(format!("invalid reasoner config {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub threshold: f64,
    pub enabled_in_training: bool,
    pub enabled_in_evaluation: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            enabled_in_training: false,
            enabled_in_evaluation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Training,
    Evaluation,
}

/// A4: `forall Diag(r1,q1) Diag(r2,q2) : (r1 > r2). GT(q1, q2)`.
pub fn reasoner_axiom(p: f64) -> Formula {
    Formula::forall(&["r1", "q1", "r2", "q2"])
        .diag(&["r1", "q1"])
        .diag(&["r2", "q2"])
        .guard(Guard::greater("r1", "r2"))
        .p(p)
        .of(Formula::atom("GT", [Term::var("q1"), Term::var("q2")]))
}

/// Truth of A4 for Q-values `qvals: [k]` (on the tape, possibly trainable)
/// and predicted rewards `rpred` (constants). No guarded pair gives 1.
pub fn reasoner_truth(
    tape: &mut Tape,
    qvals: Var,
    rpred: &[f64],
    cfg: &ReasonerConfig,
) -> Result<Var, LogicError> {
    let k = tape.shape(qvals)?.iter().product::<usize>();
    if k != rpred.len() {
        return Err(LogicError::Invalid(format!(
            "{k} q-values but {} predicted rewards",
            rpred.len()
        )));
    }
    let q = tape.reshape(qvals, vec![k])?;
    let r = tape.constant(Tensor::vector(rpred.to_vec())?);
    let alpha = cfg.alpha;
    let mut env = GroundingEnv::new();
    env.variable("r1", r)
        .variable("r2", r)
        .variable("q1", q)
        .variable("q2", q)
        .predicate("GT", move |t, a| {
            let d = t.sub(a[0], a[1])?;
            let z = t.scale(d, alpha)?;
            t.sigmoid(z)
        });
    Ok(eval_truth(tape, &reasoner_axiom(cfg.p), &env)?.value)
}

/// `weight * (1 - truth(A4))`, returned with the truth itself.
pub fn reasoner_loss(
    tape: &mut Tape,
    qvals: Var,
    rpred: &[f64],
    cfg: &ReasonerConfig,
) -> Result<(Var, Var), LogicError> {
    let truth = reasoner_truth(tape, qvals, rpred, cfg)?;
    let gap = tape.one_minus(truth)?;
    Ok((tape.scale(gap, cfg.weight)?, truth))
}

/// Actions whose predicted reward is within `threshold` of the best one
/// (inclusive). The best action is always kept.
pub fn filter_actions(rpred: &[f64], cfg: &FilterConfig) -> Vec<bool> {
    let best = rpred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    rpred.iter().map(|&r| best - r <= cfg.threshold).collect()
}

/// Epsilon-greedy selection, restricted by the filter when `filter` is set,
/// predicted rewards are available and the filter is enabled for `phase`.
pub fn guided_select<R: Rng + ?Sized>(
    qvals: &[f64],
    rpred: Option<&[f64]>,
    epsilon: f64,
    phase: Phase,
    filter: Option<&FilterConfig>,
    rng: &mut R,
) -> Result<usize, DqnError> {
    let mask = match (filter, rpred) {
        (Some(cfg), Some(r))
            if match phase {
                Phase::Training => cfg.enabled_in_training,
                Phase::Evaluation => cfg.enabled_in_evaluation,
            } =>
        {
            filter_actions(r, cfg)
        }
        _ => vec![true; qvals.len()],
    };
    select_action(qvals, epsilon, rng, &mask)
}
