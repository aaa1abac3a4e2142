use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dqn::DqnError;
use crate::tensor::{read_container, write_container, Tensor};

use super::agent::{Agent, StepLosses};
use super::metrics::{evaluate, read_metrics, write_metrics, EpochMetrics};
use super::{ExperimentConfig, HarnessError, Result};

/// What a derived seed is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    /// Network initialization and the agent's own random stream.
    Agent = 1,
    TrainEpisode = 2,
    EvalEpisode = 3,
    /// Exploration during evaluation.
    EvalPolicy = 4,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for `(run seed, purpose, epoch, episode)`.
pub fn episode_seed(run_seed: u64, purpose: SeedPurpose, epoch: usize, episode: usize) -> u64 {
    [purpose as u64, epoch as u64, episode as u64]
        .into_iter()
        .fold(splitmix(run_seed), |h, x| splitmix(h ^ x))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub metrics: Vec<EpochMetrics>,
    pub csv: PathBuf,
}

fn run_seed(cfg: &ExperimentConfig, run: usize) -> u64 {
    cfg.base_seed.wrapping_add(run as u64)
}

fn metrics_path(cfg: &ExperimentConfig, run: usize) -> PathBuf {
    cfg.condition_dir().join(format!("metrics_run{run}.csv"))
}

fn run_dir(cfg: &ExperimentConfig, run: usize) -> PathBuf {
    cfg.condition_dir().join(format!("run{run}"))
}

/// Runs every configured run of `cfg.condition` one after another.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    fs::create_dir_all(cfg.condition_dir())?;
    fs::write(
        cfg.condition_dir().join("config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    (0..cfg.runs).map(|run| run_single(cfg, run)).collect()
}

/// Trains and evaluates run `run` from scratch.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let agent = Agent::new(cfg, episode_seed(run_seed(cfg, run), SeedPurpose::Agent, 0, 0))?;
    run_epochs(cfg, run, agent, 1, Vec::new())
}

/// Continues run `run` from a checkpoint written by the harness. Metrics rows
/// after the checkpoint's epoch are recomputed.
pub fn resume_run(cfg: &ExperimentConfig, run: usize, checkpoint: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let entries = read_container(checkpoint)?;
    let get = |key: &str| {
        entries
            .iter()
            .find(|(n, _)| n == key)
            .map(|(_, t)| t.data()[0] as usize)
            .ok_or_else(|| HarnessError::Io(format!("checkpoint lacks `{key}`")))
    };
    let (epoch, saved_run) = (get("epoch")?, get("run")?);
    if saved_run != run {
        return Err(HarnessError::Invalid(format!(
            "checkpoint belongs to run {saved_run}, not {run}"
        )));
    }
    let mut agent = Agent::new(cfg, episode_seed(run_seed(cfg, run), SeedPurpose::Agent, 0, 0))?;
    agent.load_entries(&entries)?;
    let csv = metrics_path(cfg, run);
    let rows = if csv.exists() {
        read_metrics(&csv)?
            .into_iter()
            .filter(|r| r.epoch <= epoch)
            .collect()
    } else {
        Vec::new()
    };
    run_epochs(cfg, run, agent, epoch + 1, rows)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn checkpoint(cfg: &ExperimentConfig, run: usize, epoch: usize, agent: &Agent, name: &str) -> Result<PathBuf> {
    let dir = run_dir(cfg, run);
    fs::create_dir_all(&dir)?;
    let mut entries = agent.entries();
    entries.push(("epoch".into(), Tensor::scalar(epoch as f64)));
    entries.push(("run".into(), Tensor::scalar(run as f64)));
    let path = dir.join(name);
    write_container(&path, &entries)?;
    Ok(path)
}

fn run_epochs(
    cfg: &ExperimentConfig,
    run: usize,
    mut agent: Agent,
    first_epoch: usize,
    mut rows: Vec<EpochMetrics>,
) -> Result<RunOutcome> {
    fs::create_dir_all(cfg.condition_dir())?;
    let csv = metrics_path(cfg, run);
    let seed = run_seed(cfg, run);
    for epoch in first_epoch..=cfg.epochs {
        let started = Instant::now();
        let mut losses: Vec<StepLosses> = Vec::new();
        for ep in 0..cfg.train_episodes_per_epoch {
            let s = episode_seed(seed, SeedPurpose::TrainEpisode, epoch, ep);
            match agent.train_episode(&cfg.env, s) {
                Ok(l) => losses.extend(l),
                Err(HarnessError::Dqn(DqnError::NonFinite(_))) => {
                    let snapshot = checkpoint(cfg, run, epoch - 1, &agent, &format!("diagnostic_e{epoch}.bin"))?;
                    log::error!("run {run}: non-finite loss in epoch {epoch}");
                    return Err(HarnessError::NonFinite { epoch, snapshot });
                }
                Err(e) => return Err(e),
            }
        }
        let seeds: Vec<u64> = (0..cfg.eval_episodes_per_epoch)
            .map(|ep| episode_seed(seed, SeedPurpose::EvalEpisode, epoch, ep))
            .collect();
        let mut eval_rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, SeedPurpose::EvalPolicy, epoch, 0));
        let eval = evaluate(&mut agent, &cfg.env, &seeds, &mut eval_rng)?;
        let row = EpochMetrics {
            run,
            epoch,
            score_ratio: eval.score_ratio,
            precision: eval.precision,
            td_loss: mean_of(losses.iter().map(|l| l.td)),
            recognizer_loss: mean_of(losses.iter().map(|l| l.recognizer)),
            reward_loss: mean_of(losses.iter().map(|l| l.reward)),
            reasoner_truth: mean_of(losses.iter().map(|l| l.reasoner_truth)),
            agent_identified: agent.agent_class().map_or(-1, |c| c as i64),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} run {run} epoch {epoch}: score {:.3} precision {:.3} ({:.1}s)",
            cfg.condition.label(),
            row.score_ratio,
            row.precision,
            row.seconds
        );
        rows.push(row);
        write_metrics(&csv, &rows)?;
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoint(cfg, run, epoch, &agent, &format!("checkpoint_e{epoch}.bin"))?;
        }
    }
    Ok(RunOutcome {
        run,
        metrics: rows,
        csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = episode_seed(3, SeedPurpose::TrainEpisode, 1, 0);
        assert_eq!(a, episode_seed(3, SeedPurpose::TrainEpisode, 1, 0));
        let others = [
            episode_seed(3, SeedPurpose::TrainEpisode, 1, 1),
            episode_seed(3, SeedPurpose::TrainEpisode, 2, 0),
            episode_seed(3, SeedPurpose::EvalEpisode, 1, 0),
            episode_seed(4, SeedPurpose::TrainEpisode, 1, 0),
        ];
        assert!(others.iter().all(|&o| o != a));
    }
}
