//! Joint training: one AdamW step on the base path from the imitation loss
//! and one on the plug-in from the VIB loss, both evaluated at the same
//! pre-update parameters.
//!
//! The base path draws its diffusion noise from its own stream, so adding or
//! removing the plug-in never changes the base trajectory.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, ParamRef, RngStream};
use crate::policy::{imitation_loss, DiffusionPolicy, TrainingSet};
use crate::vib::{vib_loss, VibPlugin};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 64,
            lr: 3e-4,
            weight_decay: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a positive finite value"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be a finite value >= 0"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub imitation: f64,
    pub vib: Option<f64>,
    pub kl: Option<f64>,
}

impl StepLosses {
    /// `L = L_IL + L_IB`.
    pub fn total(&self) -> f64 {
        self.imitation + self.vib.unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite() && self.kl.is_none_or(f64::is_finite)
    }
}

/// Random streams consumed by training.
#[derive(Debug, Clone)]
pub struct TrainStreams {
    pub batch: RngStream,
    pub base: RngStream,
    pub vib: RngStream,
}

impl TrainStreams {
    /// Streams for a run that starts at `iteration` (0 for a fresh run).
    pub fn new(seed: u64, iteration: u64) -> Self {
        Self {
            batch: RngStream::new(seed, format!("train/batch/{iteration}")),
            base: RngStream::new(seed, format!("train/base/{iteration}")),
            vib: RngStream::new(seed, format!("train/vib/{iteration}")),
        }
    }
}

/// One optimizer step on each path for a single batch.
#[allow(clippy::too_many_arguments)]
pub fn joint_train_step(
    policy: &mut DiffusionPolicy,
    plugin: Option<&mut VibPlugin>,
    obs: ArrayView2<'_, f64>,
    chunks: ArrayView2<'_, f64>,
    opt_base: &mut AdamW,
    opt_vib: &mut AdamW,
    rng_base: &mut RngStream,
    rng_vib: &mut RngStream,
) -> Result<StepLosses> {
    let (il, base_grads) = imitation_loss(policy, obs, chunks, rng_base)?;
    let ib = match plugin.as_deref() {
        Some(p) => Some(vib_loss(p, policy, obs, chunks, rng_vib)?),
        None => None,
    };

    {
        let DiffusionPolicy { encoder, head, .. } = policy;
        let mut refs: Vec<ParamRef<'_>> = encoder.param_refs(&base_grads.encoder);
        refs.extend(head.param_refs(&base_grads.head));
        opt_base.step(&mut refs)?;
    }
    if let (Some(p), Some(l)) = (plugin, ib.as_ref()) {
        let VibPlugin { encoder, decoder, .. } = p;
        let mut refs = encoder.param_refs(&l.grads.encoder);
        refs.extend(decoder.param_refs(&l.grads.decoder));
        opt_vib.step(&mut refs)?;
    }
    Ok(StepLosses {
        imitation: il,
        vib: ib.as_ref().map(|l| l.total),
        kl: ib.as_ref().map(|l| l.kl),
    })
}

/// Optimizer state and streams for a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub opt_base: AdamW,
    pub opt_vib: AdamW,
    pub streams: TrainStreams,
    pub iteration: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub iteration: u64,
    pub opt_base: AdamW,
    pub opt_vib: AdamW,
    /// Keystream positions of the batch, base and vib streams.
    #[serde(default)]
    pub streams: Option<[u64; 3]>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = config.optimizer();
        Ok(Self {
            streams: TrainStreams::new(config.seed, 0),
            config,
            opt_base: AdamW::new(opt),
            opt_vib: AdamW::new(opt),
            iteration: 0,
        })
    }

    /// Continues from saved optimizer state and stream positions. States
    /// without positions get streams re-keyed by the resume iteration.
    pub fn resume(config: TrainConfig, state: TrainerState) -> Result<Self> {
        config.validate()?;
        let streams = match state.streams {
            Some(pos) => {
                let mut s = TrainStreams::new(config.seed, 0);
                s.batch.set_position(pos[0].into());
                s.base.set_position(pos[1].into());
                s.vib.set_position(pos[2].into());
                s
            }
            None => TrainStreams::new(config.seed, state.iteration),
        };
        Ok(Self {
            streams,
            config,
            opt_base: state.opt_base,
            opt_vib: state.opt_vib,
            iteration: state.iteration,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            iteration: self.iteration,
            opt_base: self.opt_base.clone(),
            opt_vib: self.opt_vib.clone(),
            streams: Some([&self.streams.batch, &self.streams.base, &self.streams.vib].map(|s| {
                u64::try_from(s.position()).expect("keystream position fits in u64")
            })),
        }
    }

    pub fn step(&mut self, policy: &mut DiffusionPolicy, plugin: Option<&mut VibPlugin>, data: &TrainingSet) -> Result<StepLosses> {
        let (obs, chunks) = data.sample(self.config.batch_size, &mut self.streams.batch);
        let losses = joint_train_step(
            policy,
            plugin,
            obs.view(),
            chunks.view(),
            &mut self.opt_base,
            &mut self.opt_vib,
            &mut self.streams.base,
            &mut self.streams.vib,
        )?;
        self.iteration += 1;
        if !losses.is_finite() {
            return Err(Error::Domain(format!("non-finite loss at iteration {}", self.iteration)));
        }
        Ok(losses)
    }

    /// Runs `iterations` steps, calling `log` after each.
    pub fn run(
        &mut self,
        policy: &mut DiffusionPolicy,
        mut plugin: Option<&mut VibPlugin>,
        data: &TrainingSet,
        iterations: u64,
        mut log: impl FnMut(u64, &StepLosses),
    ) -> Result<()> {
        for _ in 0..iterations {
            let l = self.step(policy, plugin.as_deref_mut(), data)?;
            log(self.iteration, &l);
        }
        Ok(())
    }
}
