//! Trajectory records, demonstration generation and the JSON Lines dataset
//! format (one record per line plus a `<file>.meta.json` sidecar).

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envsim::expert::scripted_expert;
use crate::envsim::sim::{reset, step, EnvConfig, EnvKind, EnvState, Vec2};
use crate::error::{Error, Result};
use crate::nn::RngStream;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    Rollout,
    Steered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Observation before each action.
    pub observations: Vec<Vec<f64>>,
    /// Clipped actions, aligned with `observations`.
    pub actions: Vec<Vec2>,
    /// Observation after the last action.
    pub final_observation: Vec<f64>,
    pub success: bool,
    pub source: Source,
    pub env: EnvKind,
    pub seed: u64,
    pub round: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Robot positions `p_0..p_T` (T + 1 points).
    pub fn robot_positions(&self) -> Vec<Vec2> {
        self.observations
            .iter()
            .chain(std::iter::once(&self.final_observation))
            .map(|o| crate::envsim::sim::robot_from_observation(o))
            .collect()
    }

    /// Re-runs the recorded actions from the recorded seed.
    pub fn replay(&self, cfg: &EnvConfig) -> Result<EnvState> {
        if cfg.name != self.env {
            return Err(Error::config(
                "name",
                format!("record is for {} but config is {}", self.env, cfg.name),
            ));
        }
        let (mut state, _) = reset(cfg, self.seed);
        for &a in &self.actions {
            step(cfg, &mut state, a);
        }
        Ok(state)
    }
}

/// Incrementally builds a record while an episode runs.
#[derive(Debug, Clone)]
pub struct EpisodeRecorder {
    record: TrajectoryRecord,
}

impl EpisodeRecorder {
    pub fn new(env: EnvKind, seed: u64, source: Source, round: usize, first_obs: Vec<f64>) -> Self {
        Self {
            record: TrajectoryRecord {
                observations: Vec::new(),
                actions: Vec::new(),
                final_observation: first_obs,
                success: false,
                source,
                env,
                seed,
                round,
            },
        }
    }

    pub fn push(&mut self, action: Vec2, next_obs: Vec<f64>, success: bool) {
        let prev = std::mem::replace(&mut self.record.final_observation, next_obs);
        self.record.observations.push(prev);
        self.record.actions.push(action);
        self.record.success = success;
    }

    pub fn current(&self) -> &TrajectoryRecord {
        &self.record
    }

    pub fn finish(self) -> TrajectoryRecord {
        self.record
    }
}

/// Runs the scripted expert for one episode.
pub fn run_expert_episode(cfg: &EnvConfig, seed: u64) -> TrajectoryRecord {
    let (mut state, obs) = reset(cfg, seed);
    let mut rec = EpisodeRecorder::new(cfg.name, seed, Source::Expert, 0, obs);
    'episode: loop {
        for a in scripted_expert(&state, cfg) {
            let out = step(cfg, &mut state, a);
            rec.push(out.applied_action, out.observation, out.success);
            if out.done {
                break 'episode;
            }
        }
    }
    rec.finish()
}

/// `n` successful expert demonstrations; failed episodes are replaced by
/// fresh seeds, up to `10 n` attempts in total.
pub fn generate_demos(cfg: &EnvConfig, n: usize, seed: u64) -> Result<Vec<TrajectoryRecord>> {
    if n == 0 {
        return Err(Error::Input("demo count must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = RngStream::new(seed, "demos/episode-seeds");
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= 10 * n {
            return Err(Error::Environment(format!(
                "expert reached only {}/{n} successes in {attempts} attempts",
                out.len()
            )));
        }
        attempts += 1;
        let ep_seed = rng.next_seed();
        let rec = run_expert_episode(cfg, ep_seed);
        if rec.success {
            out.push(rec);
        }
    }
    Ok(out)
}

impl RngStream {
    /// A fresh 48-bit episode seed (kept below 2^53 so it survives JSON tooling).
    pub fn next_seed(&mut self) -> u64 {
        rand::RngCore::next_u64(self) >> 16
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub env: EnvConfig,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_jsonl(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn append_jsonl(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    f.write_all(&line).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[TrajectoryRecord], meta: &DatasetMeta) -> Result<()> {
    write_jsonl(path, records)?;
    let mp = meta_path(path);
    let body = serde_json::to_vec_pretty(meta)?;
    std::fs::write(&mp, body).map_err(|e| Error::io(mp, e))
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let mp = meta_path(path);
    let s = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: DatasetMeta = serde_json::from_str(&s)?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::config(
            "format_version",
            format!("unsupported dataset version {}", meta.format_version),
        ));
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::expert::{reach_detour_side, Side};

    #[test]
    fn ten_demos_all_successful() {
        let cfg = EnvConfig::planar_reach();
        let demos = generate_demos(&cfg, 10, 0).unwrap();
        assert_eq!(demos.len(), 10);
        for d in &demos {
            assert!(d.success);
            assert_eq!(d.source, Source::Expert);
            assert_eq!(d.observations.len(), d.actions.len());
            assert!(d.actions.iter().flatten().all(|a| a.abs() <= cfg.max_step));
            // success flag agrees with the predicate on the replayed final state
            assert!(d.replay(&cfg).unwrap().is_success(cfg.success_tol));
        }
    }

    #[test]
    fn demos_are_deterministic() {
        let cfg = EnvConfig::planar_push();
        assert_eq!(generate_demos(&cfg, 3, 9).unwrap(), generate_demos(&cfg, 3, 9).unwrap());
    }

    #[test]
    fn zero_demos_rejected() {
        assert!(generate_demos(&EnvConfig::planar_reach(), 0, 0).is_err());
    }

    #[test]
    fn impossible_task_is_environment_error() {
        let mut cfg = EnvConfig::planar_reach();
        cfg.horizon = cfg.chunk_len;
        assert!(matches!(generate_demos(&cfg, 2, 0), Err(Error::Environment(_))));
    }

    #[test]
    fn biased_demos_mostly_left_seeded_count() {
        let cfg = EnvConfig::planar_reach();
        let demos = generate_demos(&cfg, 20, 0).unwrap();
        let left = demos
            .iter()
            .filter(|d| reach_detour_side(&reset(&cfg, d.seed).0, &cfg) == Side::Left)
            .count();
        // frozen from the seed-0 run; the bias is 0.9 so ~18 are expected
        assert_eq!(left, 16);
    }

    #[test]
    fn jsonl_roundtrip_with_sidecar() {
        let cfg = EnvConfig::planar_reach();
        let demos = generate_demos(&cfg, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let meta = DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            env: cfg.clone(),
            records: demos.len(),
            normalization: None,
            provenance: None,
        };
        write_dataset(&path, &demos, &meta).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_jsonl(&path).unwrap(), demos);
        assert_eq!(read_meta(&path).unwrap(), meta);
    }
}
