use rand::Rng;

use crate::env::{transition_position, Action};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use super::recognizer::CLASSES;
use super::{PerceptionError, Result};

/// MLP `CLASSES -> 32 (relu) -> 1` mapping a recognizer score vector to a
/// predicted reward.
#[derive(Debug, Clone)]
pub struct RewardNet {
    params: ParamStore,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl RewardNet {
    pub const HIDDEN: usize = 32;

    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let h = Self::HIDDEN;
        let w1 = p.add_uniform("fc1.weight", &[CLASSES, h], CLASSES, rng);
        let b1 = p.add_uniform("fc1.bias", &[h], CLASSES, rng);
        let w2 = p.add_uniform("fc2.weight", &[h, 1], h, rng);
        let b2 = p.add_uniform("fc2.bias", &[1], h, rng);
        Self {
            params: p,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Predictions `[n, 1]` for score vectors `[n, CLASSES]`.
    pub fn predict(&self, tape: &mut Tape, shapes: Var, trainable: bool) -> Result<Var> {
        let shape = tape.shape(shapes)?.to_vec();
        if shape.len() != 2 || shape[1] != CLASSES {
            return Err(PerceptionError::Shape(format!(
                "expected [n, {CLASSES}] shape vectors, got {shape:?}"
            )));
        }
        let bind = |tape: &mut Tape, id| {
            if trainable {
                tape.param(&self.params, id)
            } else {
                tape.frozen_param(&self.params, id)
            }
        };
        let (w1, b1, w2, b2) = (
            bind(tape, self.w1),
            bind(tape, self.b1),
            bind(tape, self.w2),
            bind(tape, self.b2),
        );
        let h = tape.affine(shapes, w1, b1)?;
        let h = tape.relu(h)?;
        Ok(tape.affine(h, w2, b2)?)
    }

    /// Predictions for each score vector, without gradients.
    pub fn predict_values(&self, shapes: &[[f64; CLASSES]]) -> Result<Vec<f64>> {
        if shapes.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(
            vec![shapes.len(), CLASSES],
            shapes.iter().flatten().copied().collect(),
        )?);
        let y = self.predict(&mut tape, x, false)?;
        Ok(tape.value(y)?.data().to_vec())
    }
}

/// `(predicted - actual)^2` as a scalar on the tape.
pub fn reward_loss(tape: &mut Tape, predicted: Var, actual: f64) -> Result<Var> {
    let y = tape.scalar(actual);
    let d = tape.sub(predicted, y)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq)?)
}

/// Histogram of classes over a board.
pub fn count_shapes(classes: &[usize]) -> [usize; CLASSES] {
    let mut counts = [0; CLASSES];
    for &c in classes {
        counts[c] += 1;
    }
    counts
}

/// Narrows down which class is the agent: the only class that appears
/// exactly once on every board.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentIdentifier {
    candidates: [bool; CLASSES],
    observations_seen: u64,
}

impl Default for AgentIdentifier {
    fn default() -> Self {
        Self {
            candidates: [true; CLASSES],
            observations_seen: 0,
        }
    }
}

impl AgentIdentifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps only candidates seen exactly once in `counts`. An empty result
    /// means the classification was inconsistent, and the estimate restarts.
    pub fn update(&mut self, counts: &[usize; CLASSES]) {
        self.observations_seen += 1;
        for (c, keep) in self.candidates.iter_mut().enumerate() {
            *keep &= counts[c] == 1;
        }
        if !self.candidates.iter().any(|&k| k) {
            self.candidates = [true; CLASSES];
        }
    }

    pub fn candidates(&self) -> Vec<usize> {
        (0..CLASSES).filter(|&c| self.candidates[c]).collect()
    }

    pub fn observations_seen(&self) -> u64 {
        self.observations_seen
    }

    /// The agent class once a single candidate remains.
    pub fn agent_class(&self) -> Option<usize> {
        match self.candidates().as_slice() {
            [c] => Some(*c),
            _ => None,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut data: Vec<f64> = self.candidates.iter().map(|&k| f64::from(u8::from(k))).collect();
        data.push(self.observations_seen as f64);
        Tensor::vector(data).expect("non-empty")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != CLASSES + 1 {
            return Err(PerceptionError::Checkpoint(format!(
                "agent identifier holds {} values",
                d.len()
            )));
        }
        let mut candidates = [false; CLASSES];
        for (c, slot) in candidates.iter_mut().enumerate() {
            *slot = d[c] != 0.0;
        }
        Ok(Self {
            candidates,
            observations_seen: d[CLASSES] as u64,
        })
    }
}

/// The perceived board: per-cell classes and recognizer scores.
#[derive(Debug, Clone)]
pub struct BoardView {
    pub side: usize,
    pub classes: Vec<usize>,
    pub scores: Vec<[f64; CLASSES]>,
    /// Recognizer scores of an empty cell, used for moves that stay in place.
    pub empty_scores: [f64; CLASSES],
}

impl BoardView {
    /// The unique cell classified as `agent_class`.
    pub fn locate_agent(&self, agent_class: usize) -> Result<(usize, usize)> {
        let mut hits = self.classes.iter().enumerate().filter(|(_, &c)| c == agent_class);
        match (hits.next(), hits.next()) {
            (Some((k, _)), None) => Ok((k / self.side, k % self.side)),
            _ => Err(PerceptionError::ReasoningUnavailable),
        }
    }

    /// Scores of the cell the agent would enter with `action`; a clamped move
    /// consumes nothing and yields the empty-cell scores.
    pub fn shape_at_target(&self, agent: (usize, usize), action: Action) -> [f64; CLASSES] {
        let next = transition_position(agent, action, self.side);
        if next == agent {
            self.empty_scores
        } else {
            self.scores[next.0 * self.side + next.1]
        }
    }

    /// Target-cell score vectors for every action, in action order.
    pub fn targets(&self, agent_class: Option<usize>) -> Result<[[f64; CLASSES]; 4]> {
        let class = agent_class.ok_or(PerceptionError::ReasoningUnavailable)?;
        let agent = self.locate_agent(class)?;
        Ok(Action::ALL.map(|a| self.shape_at_target(agent, a)))
    }
}

/// Predicted immediate reward of every action.
pub fn predicted_rewards_all_actions(
    net: &RewardNet,
    view: &BoardView,
    agent_class: Option<usize>,
) -> Result<[f64; 4]> {
    let targets = view.targets(agent_class)?;
    let r = net.predict_values(&targets)?;
    Ok([r[0], r[1], r[2], r[3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squared_error() {
        let mut tape = Tape::new();
        let p = tape.scalar(1.0);
        let l = reward_loss(&mut tape, p, 1.0).unwrap();
        assert_eq!(tape.item(l).unwrap(), 0.0);
        let p = tape.scalar(0.0);
        let l = reward_loss(&mut tape, p, -1.0).unwrap();
        assert_eq!(tape.item(l).unwrap(), 1.0);
    }

    #[test]
    fn zero_weights_predict_the_bias() {
        let mut net = RewardNet::new(&mut ChaCha8Rng::seed_from_u64(0));
        let ids: Vec<_> = net.params().ids().collect();
        for id in ids {
            let shape = net.params().get(id).shape().to_vec();
            let fill = if net.params().name(id) == "fc2.bias" { 0.25 } else { 0.0 };
            net.params_mut().set(id, Tensor::full(&shape, fill)).unwrap();
        }
        let r = net.predict_values(&[[0.1, 0.9, 0.0, 0.3, 1.0], [0.0; 5]]).unwrap();
        assert_eq!(r, [0.25, 0.25]);
    }

    #[test]
    fn counting() {
        let mut board = vec![0; 25];
        board[7] = 1;
        assert_eq!(count_shapes(&board), [24, 1, 0, 0, 0]);
    }

    #[test]
    fn candidates_intersect_and_reset() {
        let mut id = AgentIdentifier::new();
        id.update(&[20, 1, 2, 1, 1]);
        assert_eq!(id.candidates(), [1, 3, 4]);
        id.update(&[18, 1, 3, 2, 1]);
        assert_eq!(id.candidates(), [1, 4]);
        id.update(&[18, 1, 3, 2, 1]);
        assert_eq!(id.candidates(), [1, 4]);
        id.update(&[19, 1, 2, 1, 2]);
        assert_eq!(id.agent_class(), Some(1));
        id.update(&[25, 0, 0, 0, 0]);
        assert_eq!(id.candidates(), [0, 1, 2, 3, 4]);
        assert_eq!(id.observations_seen(), 5);
        assert_eq!(AgentIdentifier::from_tensor(&id.to_tensor()).unwrap(), id);
    }

    fn view(classes: Vec<usize>) -> BoardView {
        let scores = classes
            .iter()
            .map(|&c| {
                let mut s = [0.0; CLASSES];
                s[c] = 1.0;
                s
            })
            .collect();
        BoardView {
            side: 5,
            classes,
            scores,
            empty_scores: [1.0, 0.0, 0.0, 0.0, 0.0],
        }
    }

    #[test]
    fn target_lookup_and_clamping() {
        let mut classes = vec![0; 25];
        classes[0] = 1;
        classes[1] = 3;
        let v = view(classes);
        let agent = v.locate_agent(1).unwrap();
        assert_eq!(agent, (0, 0));
        assert_eq!(v.shape_at_target(agent, Action::Up), v.empty_scores);
        assert_eq!(v.shape_at_target(agent, Action::Right), [0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(v.targets(None), Err(PerceptionError::ReasoningUnavailable)));
        // Two agent-class cells: ambiguous.
        let mut twice = vec![0; 25];
        twice[3] = 1;
        twice[9] = 1;
        assert!(view(twice).locate_agent(1).is_err());
    }

    #[test]
    fn surrounded_by_empties_gives_equal_predictions() {
        let net = RewardNet::new(&mut ChaCha8Rng::seed_from_u64(1));
        let mut classes = vec![0; 25];
        classes[12] = 1;
        let v = view(classes);
        let r = predicted_rewards_all_actions(&net, &v, Some(1)).unwrap();
        assert!(r.iter().all(|&x| x == r[0]));
        let again = predicted_rewards_all_actions(&net, &v, Some(1)).unwrap();
        assert_eq!(r, again);
    }
}
