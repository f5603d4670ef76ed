//! Saving and restoring a training run between epochs.
//!
//! A run directory holds `model.mthm` with its `model.json` config sidecar,
//! `optimizer.mthm` with the Adam moments (tensors `m.<param>` and
//! `v.<param>`), and `progress.json` with the epoch and step counters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{load_checkpoint, read_tensors, save_checkpoint, write_tensors, ModelConfig, ModelError};
use crate::numeric::{Real, Tensor};

use super::{AdamState, TrainState, TrainingError};

pub const MODEL_FILE: &str = "model.mthm";
pub const OPTIMIZER_FILE: &str = "optimizer.mthm";
pub const PROGRESS_FILE: &str = "progress.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub epoch: usize,
    pub step: u64,
    pub optimizer_step: u64,
}

pub fn save_train_state<T: Real>(dir: &Path, cfg: &ModelConfig, state: &TrainState<T>) -> Result<(), TrainingError> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&dir.join(MODEL_FILE), cfg, &state.params)?;
    let mut moments: Vec<(String, &Tensor<T>)> = Vec::with_capacity(2 * state.opt.m.len());
    moments.extend(state.opt.m.iter().map(|(n, t)| (format!("m.{n}"), t)));
    moments.extend(state.opt.v.iter().map(|(n, t)| (format!("v.{n}"), t)));
    write_tensors(&dir.join(OPTIMIZER_FILE), &moments)?;
    let progress = Progress { epoch: state.epoch, step: state.step, optimizer_step: state.opt.step };
    let text = serde_json::to_string_pretty(&progress).map_err(ModelError::from)?;
    fs::write(dir.join(PROGRESS_FILE), text)?;
    Ok(())
}

/// Whether `dir` holds a complete saved run.
pub fn has_train_state(dir: &Path) -> bool {
    [MODEL_FILE, OPTIMIZER_FILE, PROGRESS_FILE].iter().all(|f| dir.join(f).is_file())
}

pub fn load_train_state<T: Real>(dir: &Path) -> Result<(ModelConfig, TrainState<T>), TrainingError> {
    let (cfg, params) = load_checkpoint::<T>(&dir.join(MODEL_FILE))?;
    let text = fs::read_to_string(dir.join(PROGRESS_FILE))?;
    let progress: Progress = serde_json::from_str(&text).map_err(ModelError::from)?;
    let mut opt = AdamState::new(&params);
    let mut stored = read_tensors::<T>(&dir.join(OPTIMIZER_FILE))?;
    if stored.len() != opt.m.len() + opt.v.len() {
        return Err(ModelError::Checkpoint(format!("optimizer file holds {} tensors", stored.len())).into());
    }
    for (prefix, slots) in [("m", &mut opt.m), ("v", &mut opt.v)] {
        for (name, slot) in slots.iter_mut() {
            let key = format!("{prefix}.{name}");
            let idx = stored
                .iter()
                .position(|(n, _)| *n == key)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing optimizer tensor {key}")))?;
            let (_, t) = stored.swap_remove(idx);
            if t.dims() != slot.dims() {
                return Err(ModelError::Checkpoint(format!("optimizer tensor {key} has dims {:?}", t.dims())).into());
            }
            *slot = t;
        }
    }
    opt.step = progress.optimizer_step;
    Ok((cfg, TrainState { params, opt, epoch: progress.epoch, step: progress.step }))
}
