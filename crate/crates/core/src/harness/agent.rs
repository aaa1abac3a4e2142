use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dqn::{DqnError, DqnLearner, QNetwork};
use crate::env::{transition_position, Action, EnvConfig, GridState, GLYPH};
use crate::guidance::{guided_select, reasoner_loss, FilterConfig, Phase, ReasonerConfig};
use crate::perception::{
    classify, count_shapes, recognizer_loss, reward_loss, split_patches, AgentIdentifier, BoardView,
    PatchMemory, PerceptionError, RecognizerNet, RewardNet, CLASSES,
};
use crate::tensor::{Adam, Tape, Tensor};

use super::metrics::Policy;
use super::{Condition, ExperimentConfig, HarnessError, Result};

/// What the symbolic side made of one observation.
#[derive(Debug, Clone)]
pub struct Perceived {
    pub view: BoardView,
    pub agent_class: Option<usize>,
    /// Score vector of the cell each action leads into.
    pub targets: Option<[[f64; CLASSES]; 4]>,
    /// Predicted immediate reward of each action.
    pub rpred: Option<[f64; 4]>,
    /// Cell each action leads into; `None` for a move that stays in place.
    target_cells: Option<[Option<usize>; 4]>,
}

/// Loss values of one training step; `None` where a loss was not applied.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepLosses {
    pub td: Option<f64>,
    pub recognizer: Option<f64>,
    pub reward: Option<f64>,
    pub reasoner_truth: Option<f64>,
}

/// Recognizer, reward predictor and their bookkeeping.
#[derive(Debug, Clone)]
struct Symbolic {
    recognizer: RecognizerNet,
    recognizer_opt: Adam,
    reward: RewardNet,
    reward_opt: Adam,
    memory: PatchMemory,
    identifier: AgentIdentifier,
    empty_patch: Tensor,
    grad_to_recognizer: bool,
}

impl Symbolic {
    fn perceive(&mut self, obs: &Tensor) -> Result<Perceived> {
        let patches = split_patches(obs)?;
        let side = (patches.len() as f64).sqrt() as usize;
        self.memory.update(&patches);
        let mut refs: Vec<&Tensor> = self.memory.unique_patches().iter().map(|p| p.as_ref()).collect();
        refs.push(&self.empty_patch);
        let scores = self.recognizer.scores(&Tensor::stack(&refs)?)?;
        let empty_scores = scores[scores.len() - 1];
        let cell_scores: Vec<[f64; CLASSES]> =
            self.memory.current_indices().iter().map(|&i| scores[i]).collect();
        let classes: Vec<usize> = cell_scores.iter().map(|s| classify(s)).collect();
        self.identifier.update(&count_shapes(&classes));
        let agent_class = self.identifier.agent_class();
        let view = BoardView {
            side,
            classes,
            scores: cell_scores,
            empty_scores,
        };
        let located = match agent_class.map(|c| view.locate_agent(c)) {
            Some(Ok(pos)) => Some(pos),
            Some(Err(PerceptionError::ReasoningUnavailable)) | None => None,
            Some(Err(e)) => return Err(e.into()),
        };
        let (targets, rpred, target_cells) = match located {
            Some(pos) => {
                let targets = Action::ALL.map(|a| view.shape_at_target(pos, a));
                let cells = Action::ALL.map(|a| {
                    let next = transition_position(pos, a, side);
                    (next != pos).then_some(next.0 * side + next.1)
                });
                let r = self.reward.predict_values(&targets)?;
                (Some(targets), Some([r[0], r[1], r[2], r[3]]), Some(cells))
            }
            None => (None, None, None),
        };
        Ok(Perceived {
            view,
            agent_class,
            targets,
            rpred,
            target_cells,
        })
    }

    /// One update of the recognizer (A1–A3 over the patch memory) and, when
    /// the agent is located, of the reward predictor on the consumed cell.
    fn train(&mut self, perceived: &Perceived, action: usize, reward: f64) -> Result<(f64, Option<f64>)> {
        let mut tape = Tape::new();
        let kb = recognizer_loss(&mut tape, &self.recognizer, &self.memory)?;
        let rec = tape.item(kb.loss)?;
        let mut total = kb.loss;
        let mut rl = None;
        if let (Some(targets), Some(cells)) = (perceived.targets, perceived.target_cells) {
            let input = if self.grad_to_recognizer {
                let patch = match cells[action] {
                    Some(k) => {
                        let i = self.memory.current_indices()[k];
                        self.memory.unique_patches()[i].as_ref().clone()
                    }
                    None => self.empty_patch.clone(),
                };
                let x = tape.constant(patch.reshape(vec![1, 1, GLYPH, GLYPH])?);
                self.recognizer.recognize(&mut tape, x, true)?
            } else {
                tape.constant(Tensor::new(vec![1, CLASSES], targets[action].to_vec())?)
            };
            let pred = self.reward.predict(&mut tape, input, true)?;
            let l = reward_loss(&mut tape, pred, reward)?;
            rl = Some(tape.item(l)?);
            total = tape.add(total, l)?;
        }
        let value = tape.item(total)?;
        if !value.is_finite() {
            return Err(DqnError::NonFinite(value).into());
        }
        let grads = tape.backward(total)?;
        drop(tape);
        let g = grads.for_store(self.recognizer.params());
        self.recognizer_opt.step(self.recognizer.params_mut(), g)?;
        if rl.is_some() {
            let g = grads.for_store(self.reward.params());
            self.reward_opt.step(self.reward.params_mut(), g)?;
        }
        Ok((rec, rl))
    }
}

/// A dueling Q-learner, optionally extended with perception, the action
/// reasoner and the action filter according to its [`Condition`].
#[derive(Debug, Clone)]
pub struct Agent {
    condition: Condition,
    learner: DqnLearner,
    symbolic: Option<Symbolic>,
    reasoner: ReasonerConfig,
    filter: FilterConfig,
    eval_epsilon: f64,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::new(&cfg.network, cfg.env.image_side(), &mut rng)?;
        let learner = DqnLearner::new(online, cfg.trainer.clone())?;
        let symbolic = if cfg.condition.symbolic() {
            let recognizer = RecognizerNet::new(&mut rng);
            let reward = RewardNet::new(&mut rng);
            let adam = cfg.trainer.adam();
            Some(Symbolic {
                recognizer_opt: Adam::new(adam, recognizer.params()),
                reward_opt: Adam::new(adam, reward.params()),
                recognizer,
                reward,
                memory: PatchMemory::new(),
                identifier: AgentIdentifier::new(),
                empty_patch: Tensor::full(&[1, GLYPH, GLYPH], cfg.env.background_value),
                grad_to_recognizer: cfg.reward_grad_to_recognizer,
            })
        } else {
            None
        };
        Ok(Self {
            condition: cfg.condition,
            learner,
            symbolic,
            reasoner: cfg.reasoner.clone(),
            filter: cfg.filter.clone(),
            eval_epsilon: cfg.eval_epsilon,
            rng,
        })
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn learner(&self) -> &DqnLearner {
        &self.learner
    }

    pub fn has_recognizer(&self) -> bool {
        self.symbolic.is_some()
    }

    pub fn patch_memory(&self) -> Option<&PatchMemory> {
        self.symbolic.as_ref().map(|s| &s.memory)
    }

    pub fn recognizer(&self) -> Option<&RecognizerNet> {
        self.symbolic.as_ref().map(|s| &s.recognizer)
    }

    pub fn reward_net(&self) -> Option<&RewardNet> {
        self.symbolic.as_ref().map(|s| &s.reward)
    }

    /// Class currently believed to be the agent.
    pub fn agent_class(&self) -> Option<usize> {
        self.symbolic.as_ref().and_then(|s| s.identifier.agent_class())
    }

    /// Runs perception on `obs`; `None` for the plain dueling condition.
    pub fn perceive(&mut self, obs: &Tensor) -> Result<Option<Perceived>> {
        match &mut self.symbolic {
            Some(s) => Ok(Some(s.perceive(obs)?)),
            None => Ok(None),
        }
    }

    fn select(
        &mut self,
        obs: &Tensor,
        perceived: Option<&Perceived>,
        epsilon: f64,
        phase: Phase,
    ) -> Result<usize> {
        let q = self.learner.online.q_values(obs)?;
        let rpred = perceived.and_then(|p| p.rpred);
        let filter = self.condition.filter().then_some(&self.filter);
        Ok(guided_select(
            &q,
            rpred.as_ref().map(|r| r.as_slice()),
            epsilon,
            phase,
            filter,
            &mut self.rng,
        )?)
    }

    /// Plays one training episode from `seed`, learning after every step.
    pub fn train_episode(&mut self, env: &EnvConfig, seed: u64) -> Result<Vec<StepLosses>> {
        let (mut state, obs) = GridState::reset(env, seed)?;
        let mut obs = Arc::new(obs);
        let mut out = Vec::new();
        while !state.done {
            let perceived = self.perceive(&obs)?;
            let epsilon = self.learner.epsilon();
            let action = self.select(&obs, perceived.as_ref(), epsilon, Phase::Training)?;
            let step = state.step(env, Action::ALL[action])?;
            let next = Arc::new(step.observation);
            out.push(self.learn(&obs, perceived.as_ref(), action, step.reward, &next, step.done)?);
            state = step.state;
            obs = next;
        }
        Ok(out)
    }

    /// Stores the transition and applies every loss the condition enables.
    pub fn learn(
        &mut self,
        obs: &Arc<Tensor>,
        perceived: Option<&Perceived>,
        action: usize,
        reward: f64,
        next: &Arc<Tensor>,
        done: bool,
    ) -> Result<StepLosses> {
        let mut losses = StepLosses::default();
        if let (Some(s), Some(p)) = (&mut self.symbolic, perceived) {
            let (rec, rl) = s.train(p, action, reward)?;
            losses.recognizer = Some(rec);
            losses.reward = rl;
        }
        self.learner
            .remember(Arc::clone(obs), action, reward, Arc::clone(next), done);
        if self.learner.ready() {
            let mut tape = Tape::new();
            let td = self.learner.sampled_td_loss(&mut tape, &mut self.rng)?;
            losses.td = Some(tape.item(td)?);
            let mut total = td;
            if let (true, Some(rpred)) = (self.condition.reasoner(), perceived.and_then(|p| p.rpred)) {
                let mut shape = vec![1];
                shape.extend_from_slice(obs.shape());
                let x = tape.constant(obs.reshape(shape)?);
                let q = self.learner.online.forward(&mut tape, x, true)?;
                let (loss, truth) = reasoner_loss(&mut tape, q, &rpred, &self.reasoner)?;
                losses.reasoner_truth = Some(tape.item(truth)?);
                total = tape.add(total, loss)?;
            }
            self.learner.apply(tape, total)?;
        }
        self.learner.advance()?;
        Ok(losses)
    }

    /// Container entries holding the complete training state.
    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let l = &self.learner;
        let mut out = l.online.params().entries("online/");
        out.extend(l.target.params().entries("target/"));
        out.extend(l.optimizer().entries("adam/online/", l.online.params()));
        out.extend(l.replay.entries("replay/"));
        out.push(("global_step".into(), Tensor::scalar(l.global_step() as f64)));
        out.push(("rng".into(), rng_to_tensor(&self.rng)));
        if let Some(s) = &self.symbolic {
            out.extend(s.recognizer.params().entries("recognizer/"));
            out.extend(s.recognizer_opt.entries("adam/recognizer/", s.recognizer.params()));
            out.extend(s.reward.params().entries("reward/"));
            out.extend(s.reward_opt.entries("adam/reward/", s.reward.params()));
            out.extend(s.memory.entries("memory/"));
            out.push(("identifier".into(), s.identifier.to_tensor()));
        }
        out
    }

    /// Restores state written by [`Agent::entries`] into an agent built from
    /// the same configuration.
    pub fn load_entries(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let find = |key: &str| {
            entries
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| HarnessError::Io(format!("checkpoint lacks `{key}`")))
        };
        let l = &mut self.learner;
        l.online.params_mut().load_entries("online/", entries)?;
        l.target.params_mut().load_entries("target/", entries)?;
        let online = l.online.params().clone();
        l.optimizer_mut().load_entries("adam/online/", &online, entries)?;
        l.replay.load_entries("replay/", entries)?;
        l.set_global_step(find("global_step")?.data()[0] as u64);
        self.rng = rng_from_tensor(find("rng")?)?;
        if let Some(s) = &mut self.symbolic {
            s.recognizer.params_mut().load_entries("recognizer/", entries)?;
            s.recognizer_opt
                .load_entries("adam/recognizer/", s.recognizer.params(), entries)?;
            s.reward.params_mut().load_entries("reward/", entries)?;
            s.reward_opt.load_entries("adam/reward/", s.reward.params(), entries)?;
            s.memory.load_entries("memory/", entries)?;
            s.identifier = AgentIdentifier::from_tensor(find("identifier")?)?;
        }
        Ok(())
    }
}

impl Policy for Agent {
    fn act(&mut self, _state: &GridState, obs: &Tensor, rng: &mut ChaCha8Rng) -> Result<usize> {
        let perceived = self.perceive(obs)?;
        let q = self.learner.online.q_values(obs)?;
        let rpred = perceived.as_ref().and_then(|p| p.rpred);
        let filter = self.condition.filter().then_some(&self.filter);
        Ok(guided_select(
            &q,
            rpred.as_ref().map(|r| r.as_slice()),
            self.eval_epsilon,
            Phase::Evaluation,
            filter,
            rng,
        )?)
    }
}

/// Seed, stream and word position, with 64-bit quantities split into 32-bit
/// halves so that `f64` holds them exactly.
fn rng_to_tensor(rng: &ChaCha8Rng) -> Tensor {
    let mut data: Vec<f64> = rng.get_seed().iter().map(|&b| f64::from(b)).collect();
    let stream = rng.get_stream();
    let pos = rng.get_word_pos();
    data.extend([(stream >> 32) as u32, stream as u32].map(f64::from));
    data.extend([(pos >> 96) as u32, (pos >> 64) as u32, (pos >> 32) as u32, pos as u32].map(f64::from));
    Tensor::vector(data).expect("non-empty")
}

fn rng_from_tensor(t: &Tensor) -> Result<ChaCha8Rng> {
    let d = t.data();
    if d.len() != 38 {
        return Err(HarnessError::Io(format!("rng state holds {} values", d.len())));
    }
    let mut seed = [0u8; 32];
    for (s, &v) in seed.iter_mut().zip(d) {
        *s = v as u8;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(((d[32] as u64) << 32) | d[33] as u64);
    let pos = d[34..38].iter().fold(0u128, |acc, &v| (acc << 32) | v as u128);
    rng.set_word_pos(pos);
    Ok(rng)
}
