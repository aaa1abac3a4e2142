use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::QNetwork;
use super::replay::{ReplayMemory, Transition};
use super::DqnError;
use crate::tensor::{argmax, Adam, AdamConfig, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub explore_steps: u64,
    pub target_update_period: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub huber_delta: f64,
    pub replay_capacity: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            explore_steps: 25_000,
            target_update_period: 1000,
            epsilon_start: 0.95,
            epsilon_end: 0.05,
            batch_size: 16,
            gamma: 0.99,
            learning_rate: 1e-4,
            max_grad_norm: 1.0,
            huber_delta: 1.0,
            replay_capacity: 1000,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let ok = self.explore_steps > 0
            && self.target_update_period > 0
            && self.batch_size > 0
            && self.replay_capacity >= self.batch_size
            && self.gamma > 0.0
            && self.learning_rate > 0.0
            && self.max_grad_norm > 0.0
            && self.huber_delta > 0.0
            && (0.0..=1.0).contains(&self.epsilon_end)
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(DqnError::Invalid(format!("invalid trainer config {self:?}")))
        }
    }

    /// Optimizer settings shared by every network in an agent.
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            max_grad_norm: self.max_grad_norm,
            ..AdamConfig::default()
        }
    }
}

/// Linear anneal from `epsilon_start` to `epsilon_end` over `explore_steps`.
pub fn epsilon_at(step: u64, cfg: &TrainerConfig) -> f64 {
    if step >= cfg.explore_steps {
        return cfg.epsilon_end;
    }
    let frac = step as f64 / cfg.explore_steps as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// Epsilon-greedy choice restricted to `allowed` actions. Greedy ties go to
/// the lowest index. Exactly one uniform draw decides exploration; a second
/// picks the exploratory action.
pub fn select_action<R: Rng + ?Sized>(
    qvals: &[f64],
    epsilon: f64,
    rng: &mut R,
    allowed: &[bool],
) -> Result<usize, DqnError> {
    let candidates: Vec<usize> = (0..qvals.len()).filter(|&a| allowed[a]).collect();
    if candidates.is_empty() {
        return Err(DqnError::EmptyMask);
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(candidates[rng.gen_range(0..candidates.len())]);
    }
    let restricted: Vec<f64> = candidates.iter().map(|&a| qvals[a]).collect();
    Ok(candidates[argmax(&restricted)])
}

/// Stacks `[1, H, W]` observations into `[n, 1, H, W]`.
pub fn stack_observations(obs: &[&Tensor]) -> Result<Tensor, DqnError> {
    Ok(Tensor::stack(obs)?)
}

/// Huber TD loss for `batch` on `tape`; only `online` receives gradients.
/// Targets are `r + gamma * max_a' Q_target(s', a') * (1 - done)`.
pub fn td_loss(
    tape: &mut Tape,
    online: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    cfg: &TrainerConfig,
) -> Result<Var, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::InsufficientReplay { have: 0, need: 1 });
    }
    let n = batch.len();
    let k = online.actions();
    let next = stack_observations(&batch.iter().map(|t| t.next_obs.as_ref()).collect::<Vec<_>>())?;
    let next = tape.constant(next);
    let q_next = target.forward(tape, next, false)?;
    let q_next = tape.value(q_next)?.data().to_vec();
    let targets: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let best = q_next[i * k..(i + 1) * k]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            t.reward + if t.done { 0.0 } else { cfg.gamma * best }
        })
        .collect();
    let obs = stack_observations(&batch.iter().map(|t| t.obs.as_ref()).collect::<Vec<_>>())?;
    let obs = tape.constant(obs);
    let q = online.forward(tape, obs, true)?;
    let taken = batch.iter().enumerate().map(|(i, t)| i * k + t.action).collect();
    let q_taken = tape.gather(q, taken, vec![n])?;
    let y = tape.constant(Tensor::vector(targets)?);
    let diff = tape.sub(q_taken, y)?;
    let h = tape.huber(diff, cfg.huber_delta)?;
    Ok(tape.mean(h)?)
}

/// Online/target network pair with its replay memory and optimizer.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub replay: ReplayMemory,
    optimizer: Adam,
    config: TrainerConfig,
    global_step: u64,
}

impl DqnLearner {
    pub fn new(online: QNetwork, config: TrainerConfig) -> Result<Self, DqnError> {
        config.validate()?;
        let target = online.clone();
        let optimizer = Adam::new(config.adam(), online.params());
        Ok(Self {
            replay: ReplayMemory::new(config.replay_capacity),
            online,
            target,
            optimizer,
            config,
            global_step: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.global_step, &self.config)
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn optimizer_mut(&mut self) -> &mut Adam {
        &mut self.optimizer
    }

    pub fn set_global_step(&mut self, step: u64) {
        self.global_step = step;
    }

    pub fn remember(&mut self, obs: Arc<Tensor>, action: usize, reward: f64, next_obs: Arc<Tensor>, done: bool) {
        self.replay.push(Transition {
            obs,
            action,
            reward,
            next_obs,
            done,
        });
    }

    pub fn ready(&self) -> bool {
        self.replay.len() >= self.config.batch_size
    }

    /// Samples a batch and records its TD loss on `tape`.
    pub fn sampled_td_loss<R: Rng + ?Sized>(&self, tape: &mut Tape, rng: &mut R) -> Result<Var, DqnError> {
        if !self.ready() {
            return Err(DqnError::InsufficientReplay {
                have: self.replay.len(),
                need: self.config.batch_size,
            });
        }
        let batch = self.replay.sample(self.config.batch_size, rng);
        td_loss(tape, &self.online, &self.target, &batch, &self.config)
    }

    /// Backpropagates `loss` (recorded on `tape`) into the online network and
    /// applies one clipped optimizer step. Returns the loss value. The tape is
    /// consumed so that parameters are updated in place rather than copied.
    pub fn apply(&mut self, tape: Tape, loss: Var) -> Result<f64, DqnError> {
        let value = tape.item(loss)?;
        if !value.is_finite() {
            return Err(DqnError::NonFinite(value));
        }
        let grads = tape.backward(loss)?.for_store(self.online.params());
        drop(tape);
        self.optimizer.step(self.online.params_mut(), grads)?;
        Ok(value)
    }

    /// One plain TD update on a sampled batch.
    pub fn td_train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64, DqnError> {
        let mut tape = Tape::new();
        let loss = self.sampled_td_loss(&mut tape, rng)?;
        self.apply(tape, loss)
    }

    /// Advances the global step counter, syncing the target network every
    /// `target_update_period` steps. Returns whether a sync happened.
    pub fn advance(&mut self) -> Result<bool, DqnError> {
        self.global_step += 1;
        sync_target(&self.online, &mut self.target, self.global_step, &self.config)
    }
}

/// Hard copy of `online` into `target` when `global_step` is a positive
/// multiple of the update period.
pub fn sync_target(
    online: &QNetwork,
    target: &mut QNetwork,
    global_step: u64,
    cfg: &TrainerConfig,
) -> Result<bool, DqnError> {
    if global_step > 0 && global_step.is_multiple_of(cfg.target_update_period) {
        target.copy_from(online)?;
        Ok(true)
    } else {
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::QNetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainerConfig::default();
        assert_eq!(epsilon_at(0, &cfg), 0.95);
        assert_eq!(epsilon_at(25_000, &cfg), 0.05);
        assert_eq!(epsilon_at(90_000, &cfg), 0.05);
        assert!((epsilon_at(12_500, &cfg) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_selection_respects_mask_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = [1.0, 3.0, 2.0, 0.0];
        assert_eq!(select_action(&q, 0.0, &mut rng, &[true; 4]).unwrap(), 1);
        assert_eq!(
            select_action(&q, 0.0, &mut rng, &[true, false, true, false]).unwrap(),
            2
        );
        assert_eq!(select_action(&[0.5; 4], 0.0, &mut rng, &[true; 4]).unwrap(), 0);
        assert!(matches!(
            select_action(&q, 0.0, &mut rng, &[false; 4]),
            Err(DqnError::EmptyMask)
        ));
    }

    #[test]
    fn exploration_is_uniform_over_allowed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let allowed = [true, false, true, true];
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&[0.0; 4], 1.0, &mut rng, &allowed).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        let p = 1.0 / 3.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for a in [0, 2, 3] {
            assert!((counts[a] as f64 - draws as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    fn learner(seed: u64) -> DqnLearner {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::new(&QNetConfig::default(), 50, &mut rng).unwrap();
        DqnLearner::new(net, TrainerConfig::default()).unwrap()
    }

    fn random_obs(rng: &mut ChaCha8Rng) -> Arc<Tensor> {
        let data = (0..2500).map(|_| if rng.gen_bool(0.2) { 0.0 } else { 1.0 }).collect();
        Arc::new(Tensor::new(vec![1, 50, 50], data).unwrap())
    }

    #[test]
    fn terminal_targets_are_the_reward() {
        let l = learner(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Transition {
            obs: random_obs(&mut rng),
            action: 2,
            reward: -1.0,
            next_obs: random_obs(&mut rng),
            done: true,
        };
        let mut tape = Tape::new();
        let loss = td_loss(&mut tape, &l.online, &l.target, &[&t], &l.config).unwrap();
        let q = l.online.q_values(&t.obs).unwrap()[2];
        let d: f64 = q - (-1.0);
        let want = if d.abs() <= 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
        assert!((tape.item(loss).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn training_leaves_target_untouched_until_sync() {
        let mut l = learner(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 0..16 {
            l.remember(random_obs(&mut rng), k % 4, 1.0, random_obs(&mut rng), false);
        }
        let before = l.target.params().clone();
        l.td_train_step(&mut rng).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(l.target.params().iter()) {
            assert_eq!(a, b);
        }
        assert_ne!(
            l.online.params().iter().next().unwrap().1,
            l.target.params().iter().next().unwrap().1
        );
        l.set_global_step(998);
        assert!(!l.advance().unwrap());
        assert!(l.advance().unwrap());
        let obs = random_obs(&mut rng);
        assert_eq!(l.online.q_values(&obs).unwrap(), l.target.q_values(&obs).unwrap());
        // A second sync with no training in between changes nothing.
        let snapshot = l.target.params().clone();
        sync_target(&l.online, &mut l.target, 2000, &l.config).unwrap();
        for ((_, a), (_, b)) in snapshot.iter().zip(l.target.params().iter()) {
            assert_eq!(a, b);
        }
    }
}
