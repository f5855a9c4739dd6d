//! Steering sessions: a live episode per session, SNR-ranked latent
//! dimensions, proposal previews along one dimension, and execution of either
//! a chosen proposal or an automatic chunk.
//!
//! Each session sits behind its own mutex. Executions take it with `try_lock`
//! so a concurrent execution gets [`Error::Conflict`] instead of waiting;
//! queries wait. Previews simulate on a cloned state and never touch the
//! session's environment.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, TryLockError};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analysis::proposals::{propose_along_dimension, Proposal};
use crate::analysis::SnrDim;
use crate::envsim::{append_jsonl, reset, step, EnvConfig, EnvState, EpisodeRecorder, Source, TrajectoryRecord, Vec2};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::RngStream;
use crate::rollout::{attempt_stream, chunk_noise, RolloutMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteerConfig {
    /// dB threshold for flagging a dimension as effective.
    pub threshold_db: f64,
    /// Proposal offsets cover `[-span, span]` standard deviations.
    pub span: f64,
    pub default_batch: usize,
    pub default_k: usize,
    /// Finished episodes are appended here as JSON Lines.
    pub persist: Option<PathBuf>,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            threshold_db: 0.0,
            span: 3.0,
            default_batch: 64,
            default_k: 8,
            persist: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Auto { alpha: f64 },
    Steered { dim: usize, proposal: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub provenance: Provenance,
    /// Environment step before the chunk.
    pub start_step: usize,
    /// Actions actually executed (fewer than `H` if the episode ended).
    pub actions: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionProposal {
    /// Unique within the session; stale after the next execution.
    pub id: u64,
    pub offset: f64,
    pub actions: Vec<Vec2>,
    pub trajectory: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionProposalSet {
    pub dim: usize,
    pub proposals: Vec<SessionProposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub observation: Vec<f64>,
    pub done: bool,
    pub success: bool,
    pub step: usize,
    /// Steps executed by this request.
    pub executed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub checkpoint: String,
    pub env: EnvConfig,
    pub state: EnvState,
    pub observation: Vec<f64>,
    pub done: bool,
    pub success: bool,
    pub history_len: usize,
    /// Positions visited so far, for rendering.
    pub path: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub checkpoint: String,
    pub seed: u64,
    /// Defaults to the environment the checkpoint was trained for.
    #[serde(default)]
    pub env: Option<EnvConfig>,
}

struct Session {
    id: String,
    checkpoint: String,
    model: Arc<Model>,
    env: EnvConfig,
    state: EnvState,
    recorder: EpisodeRecorder,
    explore: RngStream,
    history: Vec<HistoryEntry>,
    cache: HashMap<u64, (usize, Proposal)>,
    next_proposal: u64,
    done: bool,
    record: Option<TrajectoryRecord>,
}

impl Session {
    fn view(&self) -> SessionView {
        let rec = self.recorder_record();
        SessionView {
            id: self.id.clone(),
            checkpoint: self.checkpoint.clone(),
            env: self.env.clone(),
            state: self.state.clone(),
            observation: rec.final_observation.clone(),
            done: self.done,
            success: rec.success,
            history_len: self.history.len(),
            path: rec.robot_positions(),
        }
    }

    fn recorder_record(&self) -> &TrajectoryRecord {
        match &self.record {
            Some(r) => r,
            None => self.recorder.current(),
        }
    }

    fn ensure_running(&self) -> Result<()> {
        if self.done {
            return Err(Error::State(format!("episode in session {} has finished", self.id)));
        }
        Ok(())
    }

    /// Executes `actions` until the episode ends and returns the outcome.
    fn execute(&mut self, actions: &[Vec2], provenance: Provenance, persist: Option<&PathBuf>) -> Result<ExecutionResult> {
        let start_step = self.state.step;
        let mut executed = Vec::with_capacity(actions.len());
        for &a in actions {
            let out = step(&self.env, &mut self.state, a);
            self.recorder.push(out.applied_action, out.observation, out.success);
            executed.push(out.applied_action);
            if out.done {
                self.done = true;
                break;
            }
        }
        self.history.push(HistoryEntry {
            provenance,
            start_step,
            actions: executed.clone(),
        });
        self.cache.clear();
        if self.done {
            let record = self.recorder.current().clone();
            let replayed = record.replay(&self.env)?;
            if replayed != self.state {
                return Err(Error::State("steered record does not replay to the session state".into()));
            }
            if let Some(path) = persist {
                append_jsonl(path, &record)?;
            }
            self.record = Some(record);
        }
        let rec = self.recorder_record();
        Ok(ExecutionResult {
            observation: rec.final_observation.clone(),
            done: self.done,
            success: rec.success,
            step: self.state.step,
            executed: executed.len(),
        })
    }
}

/// Registry of loaded checkpoints and live sessions.
pub struct SessionManager {
    config: SteerConfig,
    checkpoints: BTreeMap<String, Arc<Model>>,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_session: Mutex<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionManager {
    pub fn new(config: SteerConfig) -> Self {
        Self {
            config,
            checkpoints: BTreeMap::new(),
            sessions: Mutex::new(BTreeMap::new()),
            next_session: Mutex::new(0),
        }
    }

    pub fn config(&self) -> &SteerConfig {
        &self.config
    }

    pub fn register(&mut self, id: impl Into<String>, model: Model) {
        self.checkpoints.insert(id.into(), Arc::new(model));
    }

    pub fn checkpoints(&self) -> Vec<String> {
        self.checkpoints.keys().cloned().collect()
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<String> {
        let model = self
            .checkpoints
            .get(&req.checkpoint)
            .ok_or_else(|| Error::NotFound(format!("checkpoint `{}`", req.checkpoint)))?
            .clone();
        let env = req.env.clone().unwrap_or_else(|| model.env.clone());
        env.validate()?;
        model.check_env(&env)?;
        let (state, obs) = reset(&env, req.seed);
        let id = {
            let mut n = lock(&self.next_session);
            *n += 1;
            format!("s{}", *n)
        };
        let session = Session {
            id: id.clone(),
            checkpoint: req.checkpoint.clone(),
            recorder: EpisodeRecorder::new(env.name, req.seed, Source::Steered, 0, obs),
            explore: attempt_stream(req.seed, 0),
            model,
            env,
            state,
            history: Vec::new(),
            cache: HashMap::new(),
            next_proposal: 0,
            done: false,
            record: None,
        };
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session `{id}`")))
    }

    fn with_exclusive<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let s = self.session(id)?;
        let mut guard = match s.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => {
                return Err(Error::Conflict(format!("session `{id}` is executing another request")))
            }
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
        };
        f(&mut guard)
    }

    fn with_shared<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let s = self.session(id)?;
        let mut guard = lock(&s);
        f(&mut guard)
    }

    pub fn get(&self, id: &str) -> Result<SessionView> {
        self.with_shared(id, |s| Ok(s.view()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        lock(&self.sessions).keys().cloned().collect()
    }

    /// Latent dimensions sorted by SNR, highest first.
    pub fn list_dimensions(&self, id: &str) -> Result<Vec<SnrDim>> {
        let threshold = self.config.threshold_db;
        self.with_shared(id, |s| {
            s.model.plugin()?;
            let spec = s.model.snr.as_ref().ok_or_else(|| {
                Error::Precondition(format!(
                    "checkpoint `{}` has no SNR spectrum; run `mxp snr-report` on it first",
                    s.checkpoint
                ))
            })?;
            let report = spec.report(threshold);
            Ok(spec.ranked().into_iter().map(|i| report.dims[i].clone()).collect())
        })
    }

    pub fn get_proposals(&self, id: &str, dim: usize, batch: Option<usize>, k: Option<usize>) -> Result<SessionProposalSet> {
        let batch = batch.unwrap_or(self.config.default_batch);
        let k = k.unwrap_or(self.config.default_k);
        let span = self.config.span;
        self.with_shared(id, |s| {
            s.ensure_running()?;
            let set = propose_along_dimension(&s.model, &s.env, &s.state, dim, batch, k, span)?;
            let mut proposals = Vec::with_capacity(set.proposals.len());
            for p in set.proposals {
                s.next_proposal += 1;
                let pid = s.next_proposal;
                proposals.push(SessionProposal {
                    id: pid,
                    offset: p.offset,
                    actions: p.actions.clone(),
                    trajectory: p.trajectory.clone(),
                });
                s.cache.insert(pid, (dim, p));
            }
            Ok(SessionProposalSet { dim, proposals })
        })
    }

    pub fn select_proposal(&self, id: &str, proposal: u64) -> Result<ExecutionResult> {
        let persist = self.config.persist.clone();
        self.with_exclusive(id, |s| {
            s.ensure_running()?;
            let (dim, p) = s
                .cache
                .get(&proposal)
                .cloned()
                .ok_or_else(|| Error::Conflict(format!("proposal {proposal} is stale or unknown; fetch proposals again")))?;
            s.execute(&p.actions, Provenance::Steered { dim, proposal }, persist.as_ref())
        })
    }

    /// One chunk from the base path (`alpha == 0`) or the exploration path.
    pub fn step_auto(&self, id: &str, alpha: f64) -> Result<ExecutionResult> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config {
                field: "alpha".into(),
                message: "must be a finite value >= 0".into(),
            });
        }
        let persist = self.config.persist.clone();
        self.with_exclusive(id, |s| {
            s.ensure_running()?;
            let mode = if alpha == 0.0 { RolloutMode::Base } else { RolloutMode::Explore };
            let width = s.model.policy.config.chunk_width();
            let noise = chunk_noise(s.state.seed, s.state.step / s.env.chunk_len, width);
            let init = Array2::from_shape_vec((1, width), noise).expect("width");
            let dw = s.model.exploration_width(mode);
            let mut draws = Array2::zeros((1, dw));
            if dw > 0 {
                s.explore.fill_normal(draws.as_slice_mut().expect("contiguous"));
            }
            let obs = vec![s.recorder.current().final_observation.clone()];
            let actions = s.model.act_batch(&obs, mode, alpha, &init, &draws)?.remove(0);
            s.execute(&actions, Provenance::Auto { alpha }, persist.as_ref())
        })
    }

    pub fn history(&self, id: &str) -> Result<Vec<HistoryEntry>> {
        self.with_shared(id, |s| Ok(s.history.clone()))
    }

    /// The finished episode, once the session is done.
    pub fn record(&self, id: &str) -> Result<Option<TrajectoryRecord>> {
        self.with_shared(id, |s| Ok(s.record.clone()))
    }
}
