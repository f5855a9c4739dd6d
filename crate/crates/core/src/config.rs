//! Experiment configuration: one JSON document describing the environment,
//! network sizes, training schedule, improvement rounds and file paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envsim::EnvConfig;
use crate::error::{Error, Result};
use crate::improve::RoundPlan;
use crate::policy::PolicyConfig;
use crate::train::TrainConfig;
use crate::vib::VibConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV_VAR: &str = "MXP_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { count: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: "runs/demos.jsonl".into(),
            checkpoint: "runs/model.json".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    /// `obs_dim` and `chunk_len` are taken from `env`.
    pub policy: PolicyConfig,
    pub vib: VibConfig,
    /// Train without the plug-in.
    pub no_vib: bool,
    pub threshold_db: f64,
    pub train: TrainConfig,
    pub demos: DemoConfig,
    pub rounds: Vec<RoundPlan>,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::planar_reach(),
            policy: PolicyConfig::default(),
            vib: VibConfig::default(),
            no_vib: false,
            threshold_db: 0.0,
            train: TrainConfig::default(),
            demos: DemoConfig::default(),
            rounds: vec![RoundPlan::default()],
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Policy config with the environment-derived widths filled in.
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            obs_dim: self.env.obs_dim(),
            chunk_len: self.env.chunk_len,
            ..self.policy.clone()
        }
    }

    pub fn vib_config(&self) -> Option<VibConfig> {
        (!self.no_vib).then(|| self.vib.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy_config().validate()?;
        self.vib.validate()?;
        self.train.validate()?;
        if !self.threshold_db.is_finite() {
            return Err(Error::config("threshold_db", "must be finite"));
        }
        if self.demos.count == 0 {
            return Err(Error::config("demos.count", "must be at least 1"));
        }
        for (i, r) in self.rounds.iter().enumerate() {
            r.validate().map_err(|e| match e {
                Error::Config { field, message } => Error::config(format!("rounds[{i}].{field}"), message),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
