//! Deterministic planar manipulation environments, scripted experts and
//! demonstration datasets.
//!
//! Two tasks share the same kinematics: a point robot in the unit square
//! moves by clipped per-step displacements and slides along a circular
//! obstacle instead of entering it.
//!
//! * `planar-reach`: reach a goal with the obstacle in the way; it can be
//!   passed on either side.
//! * `planar-push`: push a disk-shaped object onto a goal. The object is
//!   displaced along the contact normal whenever the robot overlaps it.

pub mod dataset;
pub mod expert;
pub mod sim;

pub use dataset::{
    append_jsonl, generate_demos, meta_path, read_jsonl, read_meta, run_expert_episode, write_dataset, write_jsonl,
    DatasetMeta, EpisodeRecorder, Source, TrajectoryRecord, DATASET_FORMAT_VERSION,
};
pub use expert::scripted_expert;
pub use sim::{
    clip_action, reset, robot_from_observation, step, EnvConfig, EnvKind, EnvState, Obstacle,
    StepOutcome, Vec2, ACTION_DIM, OBJECT_RADIUS,
};
