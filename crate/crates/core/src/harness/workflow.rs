//! Data collection and pretraining driven by a [`RunConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::export::write_rows;
use crate::error::{PatrolError, Result};
use crate::gridmap::{Action, ActionMask};
use crate::learner::{collect_random_rollouts, pretrain, ReplayBuffer, Transition};
use crate::statereward::StateVector;

/// Random-policy rollouts on the training map, one buffer per drone.
pub fn collect(cfg: &RunConfig) -> Result<Vec<ReplayBuffer<f64>>> {
    let env = cfg.training_environment()?;
    collect_random_rollouts(
        &env,
        cfg.collect.drones,
        cfg.collect.steps,
        &cfg.idleness,
        &cfg.reward_config()?,
        cfg.train.buffer_capacity,
        cfg.episode.seed,
    )
}

/// Pretrains a network on `data` and returns the checkpoint and per-epoch loss.
pub fn train(cfg: &RunConfig, data: &[ReplayBuffer<f64>]) -> Result<(Checkpoint, Vec<f64>)> {
    let mut train = cfg.train.clone();
    train.seed = cfg.episode.seed;
    let out = pretrain(data, &train)?;
    Ok((Checkpoint::from_trainer(&out.trainer, cfg), out.loss_curve))
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionRow {
    drone: usize,
    state: String,
    action: usize,
    reward: f64,
    next_state: String,
    next_mask: u8,
}

fn join(s: &StateVector<f64>) -> String {
    s.as_slice().iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn split(text: &str) -> Option<StateVector<f64>> {
    let values: Vec<f64> = text.split(' ').map(str::parse).collect::<std::result::Result<_, _>>().ok()?;
    Some(StateVector(values.try_into().ok()?))
}

/// Stores buffers as CSV; state vectors are space-separated inside one field.
pub fn write_transitions(path: &Path, buffers: &[ReplayBuffer<f64>]) -> Result<()> {
    let rows = buffers.iter().enumerate().flat_map(|(d, b)| {
        b.iter().map(move |t| TransitionRow {
            drone: d,
            state: join(&t.s),
            action: t.u.index(),
            reward: t.r,
            next_state: join(&t.s_next),
            next_mask: t.feasible_next.0,
        })
    });
    write_rows(path, rows)
}

pub fn read_transitions(path: &Path, capacity: usize) -> Result<Vec<ReplayBuffer<f64>>> {
    let csv_err = |source| PatrolError::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut buffers: Vec<ReplayBuffer<f64>> = Vec::new();
    for (line, row) in reader.deserialize::<TransitionRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        let malformed = |what: &str| PatrolError::Config(format!("{}: row {}: bad {what}", path.display(), line + 2));
        let s = split(&row.state).ok_or_else(|| malformed("state"))?;
        let s_next = split(&row.next_state).ok_or_else(|| malformed("next_state"))?;
        let u = Action::from_index(row.action).ok_or_else(|| malformed("action"))?;
        if row.next_mask == 0 || row.next_mask > ActionMask::ALL.0 {
            return Err(malformed("next_mask"));
        }
        while buffers.len() <= row.drone {
            buffers.push(ReplayBuffer::new(capacity)?);
        }
        buffers[row.drone].push(Transition { s, u, r: row.reward, s_next, feasible_next: ActionMask(row.next_mask) });
    }
    Ok(buffers)
}
