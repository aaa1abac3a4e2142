// Environment invariants shared by the env and acceptance targets.

use rand::Rng;
use symdqn_core::env::{Action, CellContent, EnvConfig, GridState};

/// Shape bounds, a cross and a single agent on `episodes` fresh boards.
pub fn check_resets(episodes: u64) {
    let cfg = EnvConfig::default();
    for seed in 0..episodes {
        let (s, _) = GridState::reset(&cfg, seed).unwrap();
        let shapes = 25 - s.count(CellContent::Empty) - 1;
        assert!((cfg.min_shapes..=cfg.max_shapes).contains(&shapes), "seed {seed}");
        assert!(s.crosses_remaining >= 1);
        assert_eq!(s.count(CellContent::Agent), 1);
        assert_eq!(s.cell(s.agent_pos), CellContent::Agent);
    }
}

fn run_episode(cfg: &EnvConfig, seed: u64) -> (Vec<f64>, GridState) {
    let (mut s, _) = GridState::reset(cfg, seed).unwrap();
    let mut rng = super::rng(seed ^ 0xA5A5);
    let mut rewards = Vec::new();
    let mut crosses = s.crosses_remaining;
    while !s.done {
        let a = Action::from_index(rng.gen_range(0..4)).unwrap();
        let before = s.agent_pos;
        let out = s.step(cfg, a).unwrap();
        let t = &out.state;
        // Agent uniqueness and position bookkeeping.
        assert_eq!(t.count(CellContent::Agent), 1);
        assert_eq!(t.cell(t.agent_pos), CellContent::Agent);
        // Edge clamping: a move changes at most one coordinate by one.
        let d = before.0.abs_diff(t.agent_pos.0) + before.1.abs_diff(t.agent_pos.1);
        assert!(d <= 1);
        if d == 0 {
            assert_eq!(out.reward, 0.0);
        }
        // Monotone termination and cross bookkeeping.
        assert!(t.crosses_remaining <= crosses);
        crosses = t.crosses_remaining;
        assert_eq!(t.crosses_remaining, t.count(CellContent::Cross));
        assert!(t.steps_taken <= cfg.max_steps);
        assert_eq!(out.done, t.crosses_remaining == 0 || t.steps_taken == cfg.max_steps);
        rewards.push(out.reward);
        s = out.state;
    }
    (rewards, s)
}

/// Step invariants, reward conservation and seed determinism over
/// `episodes` random-action episodes.
pub fn check_random_episodes(episodes: u64) {
    let cfg = EnvConfig::default();
    for seed in 0..episodes {
        let (rewards, end) = run_episode(&cfg, seed);
        // Reward conservation.
        let expected = end.crosses_consumed as f64 - end.circles_consumed as f64;
        assert_eq!(end.cumulative_reward, expected);
        assert_eq!(rewards.iter().sum::<f64>(), expected);
        if seed % 100 == 0 {
            assert_eq!(run_episode(&cfg, seed), (rewards, end), "seed {seed}");
        }
    }
}
