//! Run configuration: one JSON document covering the model, the training
//! schedule, the synthetic task, file locations and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::SyntheticTaskSpec;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("override {0:?}: expected KEY=VALUE")]
    OverrideSyntax(String),
    #[error("override {key:?}: {msg}")]
    OverridePath { key: String, msg: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding `train.*` and `test.*` files written by `generate`.
    /// When absent the task is generated in memory from `task`.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint to start from (`train`) or to decode with (`decode`).
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: SyntheticTaskSpec,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = SyntheticTaskSpec::default();
        let model = ModelConfig { feature_dim: task.feature_dim, vocab_size: task.vocab + 1, ..Default::default() };
        Self { seed: 1, model, train: TrainConfig::default(), task, paths: PathsConfig::default() }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults), applies `KEY=VALUE`
    /// overrides with dotted keys, and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|source| ConfigError::Read { path: p.display().to_string(), source })?;
                let parsed: RunConfig = serde_json::from_str(&text)?;
                serde_json::to_value(parsed)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.task.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.paths.data_dir.is_none() {
            if self.task.feature_dim != self.model.feature_dim {
                return Err(ConfigError::Invalid(format!(
                    "task.feature_dim {} differs from model.feature_dim {}",
                    self.task.feature_dim, self.model.feature_dim
                )));
            }
            if self.task.vocab + 1 > self.model.vocab_size {
                return Err(ConfigError::Invalid(format!(
                    "model.vocab_size {} cannot hold {} symbols plus the end token",
                    self.model.vocab_size, self.task.vocab
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets `a.b.c=value` inside `root`. The value is read as JSON when it
/// parses (numbers, booleans, arrays, `null`) and as a string otherwise.
/// Only existing keys can be set.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::OverrideSyntax(spec.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::OverrideSyntax(spec.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (n, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.into(),
            msg: format!("{} is not a section", parts[..n].join(".")),
        })?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| ConfigError::OverridePath { key: key.into(), msg: format!("unknown key {part:?}") })?;
        if n + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &["model.heads=2".into(), "train.optimizer.learning_rate=0.01".into(), "paths.data_dir=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.heads, 2);
        assert_eq!(cfg.train.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.paths.data_dir.as_deref(), Some(Path::new("/tmp/x")));
    }

    #[test]
    fn unknown_override_key_rejected() {
        let err = RunConfig::load(None, &["model.head=2".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::OverridePath { .. }));
        assert!(RunConfig::load(None, &["seed".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::load(None, &["model.heads=3".into()]).is_err());
        assert!(RunConfig::load(None, &["model.heads=\"four\"".into()]).is_err());
    }
}
