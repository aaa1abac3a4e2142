//! Environment invariants over 10,000 seeded episodes with random actions, and
//! an exhaustive best-trajectory oracle for the maximum score.

mod common;

use std::collections::VecDeque;

use common::envcheck::{check_random_episodes, check_resets};
use symdqn_core::env::{Action, CellContent, EnvConfig, GridState};

const EPISODES: u64 = 10_000;

#[test]
fn resets_respect_shape_bounds_and_place_a_cross() {
    check_resets(EPISODES);
}

#[test]
fn random_episodes_keep_invariants_and_replay_identically() {
    check_random_episodes(EPISODES);
}

/// Best cumulative reward over every trajectory of at most `max_steps` moves,
/// by dynamic programming over (agent cell, consumed-shape set).
fn best_trajectory_reward(s: &GridState, cfg: &EnvConfig) -> f64 {
    let shapes: Vec<usize> = (0..25)
        .filter(|&k| !matches!(s.cells[k], CellContent::Empty | CellContent::Agent))
        .collect();
    let bit = |k: usize| shapes.iter().position(|&x| x == k);
    let all_crosses: u32 = shapes
        .iter()
        .enumerate()
        .filter(|(_, &k)| s.cells[k] == CellContent::Cross)
        .map(|(i, _)| 1 << i)
        .sum();
    let n_masks = 1usize << shapes.len();
    let idx = |pos: usize, mask: usize| pos * n_masks + mask;
    let mut best = vec![f64::NEG_INFINITY; 25 * n_masks];
    let start = s.agent_pos.0 * 5 + s.agent_pos.1;
    best[idx(start, 0)] = 0.0;
    let mut overall: f64 = 0.0;
    for _ in 0..cfg.max_steps {
        let mut next = vec![f64::NEG_INFINITY; 25 * n_masks];
        for pos in 0..25 {
            for mask in 0..n_masks {
                let v = best[idx(pos, mask)];
                // Episodes end once every cross is consumed.
                if v == f64::NEG_INFINITY || mask as u32 & all_crosses == all_crosses {
                    continue;
                }
                for a in Action::ALL {
                    let (r, c) = symdqn_core::env::transition_position((pos / 5, pos % 5), a, 5);
                    let to = r * 5 + c;
                    let (mut m, mut gain) = (mask, 0.0);
                    if to != pos {
                        if let Some(b) = bit(to) {
                            if mask & (1 << b) == 0 {
                                m |= 1 << b;
                                gain = cfg.rewards.of(s.cells[to]);
                            }
                        }
                    }
                    let e = &mut next[idx(to, m)];
                    *e = e.max(v + gain);
                    overall = overall.max(v + gain);
                }
            }
        }
        best = next;
    }
    overall
}

/// Whether every cross can be reached without entering a circle.
fn crosses_reachable_safely(s: &GridState) -> bool {
    let mut seen = [false; 25];
    let mut queue = VecDeque::from([s.agent_pos]);
    seen[s.agent_pos.0 * 5 + s.agent_pos.1] = true;
    while let Some(p) = queue.pop_front() {
        for a in Action::ALL {
            let q = symdqn_core::env::transition_position(p, a, 5);
            let k = q.0 * 5 + q.1;
            if !seen[k] && s.cells[k] != CellContent::Circle {
                seen[k] = true;
                queue.push_back(q);
            }
        }
    }
    (0..25).all(|k| s.cells[k] != CellContent::Cross || seen[k])
}

#[test]
fn max_score_matches_best_trajectory_on_small_boards() {
    let cfg = EnvConfig {
        min_shapes: 3,
        max_shapes: 9,
        ..EnvConfig::default()
    };
    let mut safe = 0;
    for seed in 0..200 {
        let (s, _) = GridState::reset(&cfg, seed).unwrap();
        let best = best_trajectory_reward(&s, &cfg);
        let max = s.max_score(&cfg);
        assert_eq!(max, s.crosses_remaining as f64);
        assert!(best <= max, "seed {seed}: best {best} > max {max}");
        if crosses_reachable_safely(&s) {
            assert_eq!(best, max, "seed {seed}");
            safe += 1;
        }
    }
    assert!(safe > 150, "only {safe} boards had circle-free routes");
}
