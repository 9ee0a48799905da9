//! Experiment configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use glaudio::audio::AudioConfig;
use glaudio::train::TrainConfig;
use glaudio::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub steps: Vec<usize>,
    /// Defaults to `train.steps · train.step_size`.
    pub stop_time: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            steps: vec![8, 25, 50, 100, 200],
            stop_time: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    /// Bundle path, relative to the config file or `GLAUDIO_DATA_DIR`.
    pub dataset: Option<String>,
    /// Applied when the bundle carries no splits.
    pub splits: Option<SplitFractions>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub audio: AudioConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            dataset: None,
            splits: None,
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            audio: AudioConfig::default(),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

/// Set `key` (dotted path) in `root` from the text `raw`. The key must
/// already exist. `raw` is read as JSON when it parses, else as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| invalid(format!("unknown config key `{key}`")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    /// Apply `key=value` overrides, then re-check the whole config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        serde_json::from_value(v).map_err(|e| invalid(format!("after overrides: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_json(&text)?.with_overrides(overrides)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, dir))
    }

    pub fn sweep_stop_time(&self) -> f64 {
        self.sweep
            .stop_time
            .or(self.train.stop_time)
            .unwrap_or(self.train.steps as f64 * self.train.step_size)
    }

    /// Locate the dataset: absolute, next to the config, or under
    /// `GLAUDIO_DATA_DIR`.
    pub fn dataset_path(&self, config_dir: &Path) -> Option<PathBuf> {
        let rel = PathBuf::from(self.dataset.as_ref()?);
        if rel.is_absolute() {
            return Some(rel);
        }
        let mut candidates = vec![config_dir.join(&rel)];
        if let Some(d) = std::env::var_os("GLAUDIO_DATA_DIR") {
            candidates.push(PathBuf::from(d).join(&rel));
        }
        candidates
            .iter()
            .find(|p| p.exists())
            .cloned()
            .or_else(|| candidates.pop())
    }
}
