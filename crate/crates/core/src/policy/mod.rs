//! Base imitation policy: observation encoder, chunked-action noise head,
//! deterministic DDIM sampling and the imitation loss.
//!
//! Everything below operates in normalized space: observations and actions
//! are mapped to `[-1, 1]` with min/max stats fitted on the training set and
//! stored alongside the parameters.

pub mod data;
pub mod diffusion;
pub mod loss;
pub mod normalize;
pub mod schedule;

pub use data::{raw_windows, TrainingSet};
pub use diffusion::{step_code, DiffusionPolicy, PolicyConfig};
pub use loss::{imitation_loss, imitation_loss_with, BaseGrads, NoiseDraw};
pub use normalize::{MinMax, Normalizer};
pub use schedule::{NoiseSchedule, ScheduleKind};
