use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, GridState};

use super::{HarnessError, Result};

/// Anything that can play the grid. Learning agents only look at `obs`;
/// scripted test policies may inspect `state`.
pub trait Policy {
    fn act(&mut self, state: &GridState, obs: &crate::tensor::Tensor, rng: &mut ChaCha8Rng) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub reward: f64,
    pub max_score: f64,
    pub circles_consumed: usize,
    pub circles_at_reset: usize,
    pub steps: usize,
}

impl EpisodeResult {
    pub fn score_ratio(&self) -> f64 {
        self.reward / self.max_score
    }

    /// Fraction of the circles present at reset that were consumed; `None`
    /// for boards without circles.
    pub fn precision(&self) -> Option<f64> {
        (self.circles_at_reset > 0).then(|| self.circles_consumed as f64 / self.circles_at_reset as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub score_ratio: f64,
    /// Mean over episodes that had circles; NaN if none did.
    pub precision: f64,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalSummary {
    pub fn from_episodes(episodes: Vec<EpisodeResult>) -> Self {
        let score_ratio = episodes.iter().map(EpisodeResult::score_ratio).sum::<f64>() / episodes.len() as f64;
        let precisions: Vec<f64> = episodes.iter().filter_map(EpisodeResult::precision).collect();
        let precision = if precisions.is_empty() {
            f64::NAN
        } else {
            precisions.iter().sum::<f64>() / precisions.len() as f64
        };
        Self {
            score_ratio,
            precision,
            episodes,
        }
    }
}

/// Plays one episode per seed with `policy`.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &mut P,
    env: &EnvConfig,
    seeds: &[u64],
    rng: &mut ChaCha8Rng,
) -> Result<EvalSummary> {
    if seeds.is_empty() {
        return Err(HarnessError::Invalid("evaluation needs at least one episode".into()));
    }
    let mut episodes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (mut state, mut obs) = GridState::reset(env, seed)?;
        let max_score = state.max_score(env);
        while !state.done {
            let a = policy.act(&state, &obs, rng)?;
            let action = Action::from_index(a)
                .ok_or_else(|| HarnessError::Invalid(format!("policy chose action {a}")))?;
            let step = state.step(env, action)?;
            state = step.state;
            obs = step.observation;
        }
        episodes.push(EpisodeResult {
            seed,
            reward: state.cumulative_reward,
            max_score,
            circles_consumed: state.circles_consumed,
            circles_at_reset: state.circles_at_reset,
            steps: state.steps_taken,
        });
    }
    Ok(EvalSummary::from_episodes(episodes))
}

/// Trailing rolling mean; the first `window - 1` entries average the
/// available prefix. NaN entries are skipped.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(HarnessError::Invalid("cannot smooth an empty series".into()));
    }
    if window == 0 {
        return Err(HarnessError::Invalid("smoothing window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let vals: Vec<f64> = series[lo..=i].iter().copied().filter(|v| !v.is_nan()).collect();
            match vals.first() {
                None => f64::NAN,
                // Shifted by the first value, so constant windows are exact.
                Some(&x0) => x0 + vals.iter().map(|v| v - x0).sum::<f64>() / vals.len() as f64,
            }
        })
        .collect())
}

/// Column order of the metrics CSV (format v1).
pub const METRICS_HEADER: [&str; 10] = [
    "run",
    "epoch",
    "score_ratio",
    "precision",
    "td_loss",
    "recognizer_loss",
    "reward_loss",
    "reasoner_truth",
    "agent_identified",
    "seconds",
];

/// One row of the metrics CSV. Losses of components that are not active in a
/// condition are left empty; `agent_identified` is the believed agent class
/// or -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub run: usize,
    pub epoch: usize,
    pub score_ratio: f64,
    pub precision: f64,
    pub td_loss: Option<f64>,
    pub recognizer_loss: Option<f64>,
    pub reward_loss: Option<f64>,
    pub reasoner_truth: Option<f64>,
    pub agent_identified: i64,
    pub seconds: f64,
}

impl EpochMetrics {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        let eq_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => eq(x, y),
            (None, None) => true,
            _ => false,
        };
        self.run == other.run
            && self.epoch == other.epoch
            && eq(self.score_ratio, other.score_ratio)
            && eq(self.precision, other.precision)
            && eq_opt(self.td_loss, other.td_loss)
            && eq_opt(self.recognizer_loss, other.recognizer_loss)
            && eq_opt(self.reward_loss, other.reward_loss)
            && eq_opt(self.reasoner_truth, other.reasoner_truth)
            && self.agent_identified == other.agent_identified
    }
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(HarnessError::Invalid(format!(
            "{} has header {header:?}, expected {METRICS_HEADER:?}",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth(&[0.4; 7], 5).unwrap(), [0.4; 7]);
        let s = smooth(&[0.0, 0.0, 0.0, 0.0, 5.0], 5).unwrap();
        assert_eq!(s[4], 1.0);
        let x = [0.3, -1.0, 2.5];
        assert_eq!(smooth(&x, 1).unwrap(), x);
        assert_eq!(smooth(&[2.0, 4.0, 9.0], 5).unwrap(), [2.0, 3.0, 5.0]);
        assert!(smooth(&[], 5).is_err());
        assert!(smooth(&[1.0], 0).is_err());
    }

    #[test]
    fn ratio_and_precision() {
        let ep = EpisodeResult {
            seed: 0,
            reward: 2.0,
            max_score: 4.0,
            circles_consumed: 1,
            circles_at_reset: 4,
            steps: 50,
        };
        assert_eq!(ep.score_ratio(), 0.5);
        assert_eq!(ep.precision(), Some(0.25));
        let none = EpisodeResult {
            circles_at_reset: 0,
            circles_consumed: 0,
            ..ep
        };
        let s = EvalSummary::from_episodes(vec![ep, none]);
        assert_eq!(s.precision, 0.25);
        assert_eq!(s.score_ratio, 0.5);
    }

    #[test]
    fn csv_round_trip_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            EpochMetrics {
                run: 0,
                epoch: 1,
                score_ratio: 0.25,
                precision: 0.1,
                td_loss: Some(0.02),
                recognizer_loss: None,
                reward_loss: None,
                reasoner_truth: None,
                agent_identified: -1,
                seconds: 1.5,
            },
            EpochMetrics {
                run: 0,
                epoch: 2,
                score_ratio: -0.5,
                precision: f64::NAN,
                td_loss: None,
                recognizer_loss: Some(0.3),
                reward_loss: Some(0.4),
                reasoner_truth: Some(0.9),
                agent_identified: 1,
                seconds: 2.0,
            },
        ];
        write_metrics(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        let back = read_metrics(&path).unwrap();
        assert!(back.iter().zip(&rows).all(|(a, b)| a.same_outcome(b)));
    }
}
