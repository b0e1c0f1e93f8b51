//! Run configuration files.
//!
//! A TOML document with the sections `task`, `reward`, `planner`,
//! `stabilizer`, `trainer` and `run`. Unknown keys are rejected, missing keys
//! take their defaults, and `reward.lambda` / `reward.q` fall back to the
//! task's own defaults when absent.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::task_spec;
use crate::error::{Error, Result};
use crate::policy::PlannerConfig;
use crate::retarget::MappingTable;
use crate::reward::RewardParams;
use crate::stabilizer::StabilizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Registered task name.
    pub name: String,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            name: "planar_stand".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActWith {
    /// Cross-entropy planning through the world model.
    Plan,
    /// The policy prior's mean action.
    Prior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Segment length `l_s`: steps collected before rewards are finalized,
    /// and the number of updates per iteration.
    pub segment_length: usize,
    pub total_steps: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between evaluation points.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Initial steps taken with uniform random actions.
    pub seed_steps: usize,
    /// Environment steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Stop once an evaluation reaches this fraction of the task's maximum
    /// episode return.
    pub stop_at_fraction: Option<f64>,
    /// Stop collecting once the run has taken this many seconds.
    pub max_wall_time_s: Option<f64>,
    /// Skip retargeting and reconstruction, scoring every frame zero.
    pub bypass_stabilizer: bool,
    pub act_with: ActWith,
    /// Add the planner's final standard deviation as exploration noise.
    pub explore: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            segment_length: 145,
            total_steps: 100_000,
            buffer_capacity: 1_000_000,
            batch_size: 256,
            eval_interval: 5_000,
            eval_episodes: 1,
            seed_steps: 2_000,
            checkpoint_interval: 0,
            stop_at_fraction: None,
            max_wall_time_s: None,
            bypass_stabilizer: false,
            act_with: ActWith::Plan,
            explore: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub seed: u64,
    /// Training episodes written as trajectory files (the first N).
    pub dump_episodes: usize,
    /// Write the per-step reward decomposition to `rewards.csv`.
    pub log_rewards: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 0,
            dump_episodes: 0,
            log_rewards: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub reward: RewardParams,
    pub planner: PlannerConfig,
    pub stabilizer: StabilizerConfig,
    pub trainer: TrainerConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        // typed parse first: unknown keys and type errors carry line numbers
        toml::from_str::<RunConfig>(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let task_name = table
            .get("task")
            .and_then(|t| t.get("name"))
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| TaskConfig::default().name);
        let spec = task_spec(&task_name)?;
        let reward = table
            .entry("reward")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let reward = reward
            .as_table_mut()
            .ok_or_else(|| Error::Config("'reward' must be a table".into()))?;
        reward
            .entry("lambda")
            .or_insert(toml::Value::Float(spec.lambda_default));
        reward.entry("q").or_insert(toml::Value::Float(spec.q_default));
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// A bundled config by name (`stand`, `walk`, `pendulum`) or a file path.
    pub fn resolve(name_or_path: &str, overrides: &[String]) -> Result<Self> {
        match crate::assets::config_text(name_or_path) {
            Some(text) => Self::from_toml_str(text, overrides),
            None => Self::load(Path::new(name_or_path), overrides),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = task_spec(&self.task.name)?;
        self.reward.validate()?;
        self.planner.validate()?;
        self.stabilizer.validate()?;
        let t = &self.trainer;
        if t.segment_length == 0 {
            return Err(Error::Config("trainer.segment_length must be >= 1".into()));
        }
        if t.segment_length > t.buffer_capacity {
            return Err(Error::Config(format!(
                "trainer.segment_length ({}) exceeds trainer.buffer_capacity ({})",
                t.segment_length, t.buffer_capacity
            )));
        }
        if t.batch_size == 0 || t.eval_interval == 0 || t.eval_episodes == 0 {
            return Err(Error::Config(
                "trainer.batch_size, eval_interval and eval_episodes must be >= 1".into(),
            ));
        }
        if t.max_wall_time_s.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("trainer.max_wall_time_s must be > 0".into()));
        }
        if let Some(f) = t.stop_at_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config("trainer.stop_at_fraction must be in (0, 1]".into()));
            }
        }
        if self.stabilizer.min_length > t.segment_length {
            return Err(Error::Config(format!(
                "stabilizer.min_length ({}) exceeds trainer.segment_length ({})",
                self.stabilizer.min_length, t.segment_length
            )));
        }
        let mapping = MappingTable::resolve(spec.mapping)?;
        self.reward.participating_indices(mapping.human())?;
        Ok(())
    }

    /// The fully resolved config as TOML; loading it reproduces `self`.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`RunConfig::to_toml_string`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

/// Applies one `section.key=value` override; the value is parsed as a TOML
/// value and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override '{spec}' has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{spec}': '{k}' is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
