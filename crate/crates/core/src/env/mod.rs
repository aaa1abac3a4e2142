//! The 5x5 shapes gridworld: seeded board generation, movement with edge
//! clamping, shape consumption, rewards, termination and rendering.

mod render;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use render::{glyph, render_cells, GLYPH};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("trace replay diverged at step {step}: expected reward {expected}, got {actual}")]
    TraceMismatch {
        step: usize,
        expected: f64,
        actual: f64,
    },
}

/// Contents of one cell. The discriminant is the class index used by the
/// recognizer and reward predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellContent {
    Empty = 0,
    Agent = 1,
    Circle = 2,
    Cross = 3,
    Square = 4,
}

impl CellContent {
    pub const ALL: [CellContent; 5] = [
        CellContent::Empty,
        CellContent::Agent,
        CellContent::Circle,
        CellContent::Cross,
        CellContent::Square,
    ];
    pub const SHAPES: [CellContent; 3] = [CellContent::Circle, CellContent::Square, CellContent::Cross];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rewards {
    pub circle: f64,
    pub cross: f64,
    pub square: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Self {
            circle: -1.0,
            cross: 1.0,
            square: 0.0,
        }
    }
}

impl Rewards {
    /// Reward for entering a cell with `kind`; 0 for empty cells.
    pub fn of(&self, kind: CellContent) -> f64 {
        match kind {
            CellContent::Circle => self.circle,
            CellContent::Cross => self.cross,
            CellContent::Square => self.square,
            CellContent::Empty | CellContent::Agent => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub grid_side: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub rewards: Rewards,
    pub max_steps: usize,
    /// Must equal the bitmap size, 10.
    pub cell_pixels: usize,
    pub background_value: f64,
    pub shape_value: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_side: 5,
            min_shapes: 6,
            max_shapes: 18,
            rewards: Rewards::default(),
            max_steps: 50,
            cell_pixels: GLYPH,
            background_value: 1.0,
            shape_value: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        let cells = self.grid_side * self.grid_side;
        if self.grid_side < 2 {
            return bad(format!("grid side {} is too small", self.grid_side));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes || self.max_shapes >= cells {
            return bad(format!(
                "need 0 < min_shapes ({}) <= max_shapes ({}) <= {}",
                self.min_shapes,
                self.max_shapes,
                cells - 1
            ));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if self.cell_pixels != GLYPH {
            return bad(format!("cell_pixels must be {GLYPH}"));
        }
        if self.rewards.cross <= 0.0 {
            return bad("crosses must carry a positive reward".into());
        }
        for v in [self.background_value, self.shape_value] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("pixel value {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn image_side(&self) -> usize {
        self.grid_side * self.cell_pixels
    }
}

/// One step in the action's direction; moves off the board stay in place.
pub fn transition_position(pos: (usize, usize), action: Action, side: usize) -> (usize, usize) {
    let (r, c) = pos;
    match action {
        Action::Up => (r.saturating_sub(1), c),
        Action::Down => ((r + 1).min(side - 1), c),
        Action::Left => (r, c.saturating_sub(1)),
        Action::Right => (r, (c + 1).min(side - 1)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Row-major cell contents.
    pub cells: Vec<CellContent>,
    pub agent_pos: (usize, usize),
    pub steps_taken: usize,
    pub cumulative_reward: f64,
    pub crosses_remaining: usize,
    pub crosses_consumed: usize,
    pub circles_consumed: usize,
    /// Counts of shapes on the board right after reset.
    pub crosses_at_reset: usize,
    pub circles_at_reset: usize,
    pub done: bool,
    side: usize,
}

/// What a step consumed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// `None` for empty cells and clamped moves.
    pub consumed: Option<CellContent>,
    pub was_negative: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: GridState,
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

impl GridState {
    /// Draws a fresh board: a uniform shape count, uniform kinds, and distinct
    /// uniform cells for the shapes and the agent. A board without crosses
    /// gets one shape converted to a cross.
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<(GridState, Tensor), EnvError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = config.grid_side;
        let n = rng.gen_range(config.min_shapes..=config.max_shapes);
        let picks = index::sample(&mut rng, side * side, n + 1).into_vec();
        let mut cells = vec![CellContent::Empty; side * side];
        cells[picks[0]] = CellContent::Agent;
        for &k in &picks[1..] {
            cells[k] = CellContent::SHAPES[rng.gen_range(0..CellContent::SHAPES.len())];
        }
        if !cells.contains(&CellContent::Cross) {
            let k = picks[1 + rng.gen_range(0..n)];
            cells[k] = CellContent::Cross;
        }
        let count = |kind| cells.iter().filter(|&&c| c == kind).count();
        let crosses = count(CellContent::Cross);
        let circles = count(CellContent::Circle);
        let state = GridState {
            agent_pos: (picks[0] / side, picks[0] % side),
            steps_taken: 0,
            cumulative_reward: 0.0,
            crosses_remaining: crosses,
            crosses_consumed: 0,
            circles_consumed: 0,
            crosses_at_reset: crosses,
            circles_at_reset: circles,
            done: false,
            side,
            cells,
        };
        let obs = state.render(config);
        Ok((state, obs))
    }

    /// Builds a state from explicit cells, e.g. for constructed test boards.
    pub fn from_cells(cells: Vec<CellContent>, side: usize) -> Result<GridState, EnvError> {
        if cells.len() != side * side {
            return Err(EnvError::InvalidConfig(format!(
                "{} cells for a {side}x{side} board",
                cells.len()
            )));
        }
        let agents: Vec<usize> = (0..cells.len())
            .filter(|&k| cells[k] == CellContent::Agent)
            .collect();
        if agents.len() != 1 {
            return Err(EnvError::InvalidConfig(format!(
                "board has {} agents",
                agents.len()
            )));
        }
        let count = |kind| cells.iter().filter(|&&c| c == kind).count();
        let crosses = count(CellContent::Cross);
        let circles = count(CellContent::Circle);
        Ok(GridState {
            agent_pos: (agents[0] / side, agents[0] % side),
            steps_taken: 0,
            cumulative_reward: 0.0,
            crosses_remaining: crosses,
            crosses_consumed: 0,
            circles_consumed: 0,
            crosses_at_reset: crosses,
            circles_at_reset: circles,
            done: crosses == 0,
            side,
            cells,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cell(&self, pos: (usize, usize)) -> CellContent {
        self.cells[pos.0 * self.side + pos.1]
    }

    pub fn count(&self, kind: CellContent) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    pub fn render(&self, config: &EnvConfig) -> Tensor {
        render_cells(&self.cells, config)
    }

    /// Moves the agent, consuming whatever occupies the target cell.
    pub fn step(&self, config: &EnvConfig, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let mut next = self.clone();
        let target = transition_position(self.agent_pos, action, self.side);
        let mut info = StepInfo {
            consumed: None,
            was_negative: false,
        };
        let mut reward = 0.0;
        if target != self.agent_pos {
            let kind = self.cell(target);
            if kind != CellContent::Empty {
                info.consumed = Some(kind);
            }
            reward = config.rewards.of(kind);
            info.was_negative = reward < 0.0;
            match kind {
                CellContent::Cross => {
                    next.crosses_remaining -= 1;
                    next.crosses_consumed += 1;
                }
                CellContent::Circle => next.circles_consumed += 1,
                _ => {}
            }
            next.cells[self.agent_pos.0 * self.side + self.agent_pos.1] = CellContent::Empty;
            next.cells[target.0 * self.side + target.1] = CellContent::Agent;
            next.agent_pos = target;
        }
        next.steps_taken += 1;
        next.cumulative_reward += reward;
        next.done = next.crosses_remaining == 0 || next.steps_taken >= config.max_steps;
        let observation = next.render(config);
        Ok(StepOutcome {
            done: next.done,
            state: next,
            observation,
            reward,
            info,
        })
    }

    /// Sum of the positive rewards on the board; on a fresh board this is
    /// the maximum obtainable score.
    pub fn max_score(&self, config: &EnvConfig) -> f64 {
        self.cells
            .iter()
            .map(|&c| config.rewards.of(c).max(0.0))
            .sum()
    }
}

/// Replayable record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub config: EnvConfig,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl EpisodeTrace {
    /// Re-runs the trace, checking every reward; returns the final state.
    pub fn replay(&self) -> Result<GridState, EnvError> {
        let (mut state, _) = GridState::reset(&self.config, self.seed)?;
        for (step, (&a, &expected)) in self.actions.iter().zip(&self.rewards).enumerate() {
            let out = state.step(&self.config, a)?;
            if out.reward != expected {
                return Err(EnvError::TraceMismatch {
                    step,
                    expected,
                    actual: out.reward,
                });
            }
            state = out.state;
        }
        Ok(state)
    }
}
