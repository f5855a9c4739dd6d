//! A trained policy with its optional plug-in and the metadata stored with
//! them in a checkpoint.

use std::path::Path;

use ndarray::Axis;

use crate::analysis::SnrSpectrum;
use crate::envsim::{EnvConfig, TrajectoryRecord};
use crate::error::{ensure_width, Error, Result};
use crate::nn::Checkpoint;
use crate::policy::diffusion::ckpt_meta_object;
use crate::policy::{DiffusionPolicy, PolicyConfig, TrainingSet};
use crate::train::{StepLosses, TrainConfig, Trainer, TrainerState};
use crate::vib::{VibConfig, VibPlugin};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub env: EnvConfig,
    pub policy: DiffusionPolicy,
    pub plugin: Option<VibPlugin>,
    /// Per-dimension std of training-set embeddings (scale for the
    /// condition-noise explorer).
    pub embedding_std: Vec<f64>,
    pub snr: Option<SnrSpectrum>,
}

impl Model {
    pub fn fresh(env: EnvConfig, policy: PolicyConfig, vib: Option<VibConfig>, records: &[TrajectoryRecord], seed: u64) -> Result<(Self, TrainingSet)> {
        env.validate()?;
        let policy_cfg = PolicyConfig {
            obs_dim: env.obs_dim(),
            chunk_len: env.chunk_len,
            ..policy
        };
        let (data, norm) = TrainingSet::fit(records, policy_cfg.obs_dim, policy_cfg.chunk_len)?;
        let policy = DiffusionPolicy::new(policy_cfg, norm, seed)?;
        let plugin = vib
            .map(|v| VibPlugin::new(v, policy.config.embed_dim, seed))
            .transpose()?;
        let embedding_std = vec![0.0; policy.config.embed_dim];
        Ok((
            Self {
                env,
                policy,
                plugin,
                embedding_std,
                snr: None,
            },
            data,
        ))
    }

    /// Windows of `records` under this model's normalization.
    pub fn training_set(&self, records: &[TrajectoryRecord]) -> Result<TrainingSet> {
        TrainingSet::with_normalizer(records, &self.policy.normalizer, self.policy.config.chunk_len)
    }

    /// Recomputes the embedding spread over a training set.
    pub fn refresh_embedding_std(&mut self, data: &TrainingSet) -> Result<()> {
        let c = self.policy.encode_batch(data.observations())?;
        self.embedding_std = c.std_axis(Axis(0), 0.0).to_vec();
        Ok(())
    }

    pub fn plugin(&self) -> Result<&VibPlugin> {
        self.plugin
            .as_ref()
            .ok_or_else(|| Error::Precondition("checkpoint has no exploration plug-in (trained with --no-vib)".into()))
    }

    /// Trains for `iterations` steps and refreshes the embedding spread.
    pub fn train(&mut self, trainer: &mut Trainer, data: &TrainingSet, iterations: u64, log: impl FnMut(u64, &StepLosses)) -> Result<()> {
        trainer.run(&mut self.policy, self.plugin.as_mut(), data, iterations, log)?;
        self.refresh_embedding_std(data)
    }

    pub fn to_checkpoint(&self, trainer: Option<&TrainerState>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        self.policy.write_checkpoint(&mut ck)?;
        if let Some(p) = &self.plugin {
            p.write_checkpoint(&mut ck)?;
        }
        let meta = ckpt_meta_object(&mut ck);
        meta.insert("env".into(), serde_json::to_value(&self.env)?);
        meta.insert("embedding_std".into(), serde_json::to_value(&self.embedding_std)?);
        if let Some(s) = &self.snr {
            meta.insert("snr".into(), serde_json::to_value(s)?);
        }
        if let Some(t) = trainer {
            meta.insert("trainer".into(), serde_json::to_value(t)?);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let policy = DiffusionPolicy::read_checkpoint(ck)?;
        let plugin = VibPlugin::read_checkpoint(ck)?;
        let meta = |k: &str| ck.meta.get(k).cloned();
        let env: EnvConfig = serde_json::from_value(meta("env").ok_or_else(|| Error::Checkpoint("missing env config".into()))?)?;
        ensure_width("checkpoint observation", env.obs_dim(), policy.config.obs_dim)?;
        let embedding_std: Vec<f64> = match meta("embedding_std") {
            Some(v) => serde_json::from_value(v)?,
            None => vec![0.0; policy.config.embed_dim],
        };
        let snr = meta("snr").map(serde_json::from_value).transpose()?;
        Ok(Self {
            env,
            policy,
            plugin,
            embedding_std,
            snr,
        })
    }

    pub fn trainer_state(ck: &Checkpoint) -> Result<Option<TrainerState>> {
        ck.meta.get("trainer").cloned().map(serde_json::from_value).transpose().map_err(Into::into)
    }

    pub fn save(&self, path: &Path, trainer: Option<&TrainerState>) -> Result<()> {
        self.to_checkpoint(trainer)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Errors unless the model was trained for `env`.
    pub fn check_env(&self, env: &EnvConfig) -> Result<()> {
        if env.name != self.env.name || env.chunk_len != self.env.chunk_len {
            return Err(Error::config(
                "env",
                format!(
                    "checkpoint was trained for {} (H = {}), not {} (H = {})",
                    self.env.name, self.env.chunk_len, env.name, env.chunk_len
                ),
            ));
        }
        Ok(())
    }
}

/// Fits normalization, initializes and trains a model from scratch.
pub fn train_model(
    env: &EnvConfig,
    policy: PolicyConfig,
    vib: Option<VibConfig>,
    train: &TrainConfig,
    records: &[TrajectoryRecord],
    log: impl FnMut(u64, &StepLosses),
) -> Result<(Model, Trainer)> {
    let (mut model, data) = Model::fresh(env.clone(), policy, vib, records, train.seed)?;
    let mut trainer = Trainer::new(train.clone())?;
    model.train(&mut trainer, &data, train.iterations, log)?;
    Ok((model, trainer))
}
