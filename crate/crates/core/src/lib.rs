//! Latent-space exploration for chunked-action diffusion policies.
//!
//! A base diffusion policy is trained by imitation; a variational
//! information-bottleneck plug-in learns a compact latent around its
//! observation embedding. Sampling in that latent yields diverse but
//! well-formed action chunks, which feed success-filtered self-improvement
//! rounds and an interactive steering service.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod analysis;
pub mod config;
pub mod envsim;
pub mod error;
pub mod improve;
pub mod model;
pub mod nn;
pub mod policy;
pub mod rollout;
pub mod steer;
pub mod train;
pub mod vib;

pub use analysis::{SnrReport, SnrSpectrum};
pub use config::ExperimentConfig;
pub use envsim::{EnvConfig, EnvKind, EnvState, Source, TrajectoryRecord};
pub use error::{Error, Result};
pub use improve::{ImprovementRoundReport, RoundPlan};
pub use model::{train_model, Model};
pub use policy::{DiffusionPolicy, PolicyConfig};
pub use rollout::RolloutMode;
pub use steer::{SessionManager, SteerConfig};
pub use train::{TrainConfig, Trainer};
pub use vib::{LatentGaussian, VibConfig, VibPlugin};
