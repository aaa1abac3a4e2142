// Scripted policies that see the true board.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symdqn_core::dqn::{QNetConfig, QNetwork};
use symdqn_core::env::{transition_position, Action, EnvConfig, GridState};
use symdqn_core::guidance::{guided_select, FilterConfig, Phase};
use symdqn_core::harness::{evaluate, EvalSummary, HarnessError, Policy};
use symdqn_core::tensor::Tensor;

/// True immediate reward of every action, read straight off the cells.
pub fn oracle_rewards(state: &GridState, env: &EnvConfig) -> [f64; 4] {
    Action::ALL.map(|a| {
        let next = transition_position(state.agent_pos, a, state.side());
        if next == state.agent_pos {
            0.0
        } else {
            env.rewards.of(state.cell(next))
        }
    })
}

/// An untrained Q-network steered by the action filter with oracle rewards.
pub struct OracleFilterPolicy {
    pub net: QNetwork,
    pub env: EnvConfig,
    pub epsilon: f64,
    pub filter: FilterConfig,
}

impl OracleFilterPolicy {
    pub fn new(seed: u64, env: EnvConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::new(&QNetConfig::default(), env.image_side(), &mut rng).unwrap();
        Self {
            net,
            env,
            epsilon: 0.05,
            filter: FilterConfig::default(),
        }
    }
}

impl Policy for OracleFilterPolicy {
    fn act(&mut self, state: &GridState, obs: &Tensor, rng: &mut ChaCha8Rng) -> Result<usize, HarnessError> {
        let q = self.net.q_values(obs)?;
        let r = oracle_rewards(state, &self.env);
        Ok(guided_select(&q, Some(&r), self.epsilon, Phase::Evaluation, Some(&self.filter), rng)?)
    }
}

/// Evaluation of [`OracleFilterPolicy`] over `episodes` seeded boards.
pub fn oracle_filter_summary(episodes: u64, seed: u64) -> EvalSummary {
    let env = EnvConfig::default();
    let mut policy = OracleFilterPolicy::new(seed, env.clone());
    let seeds: Vec<u64> = (0..episodes).map(|k| seed * 1_000_003 + k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    evaluate(&mut policy, &env, &seeds, &mut rng).unwrap()
}
