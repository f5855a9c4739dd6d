//! Closed-loop execution of a model in the planar environments.
//!
//! Every episode re-plans one chunk every `H` steps. The initial DDIM noise
//! of a chunk depends only on `(start seed, chunk index)`, so base-mode
//! episodes from the same start are identical; the exploration draws come
//! from a per-attempt stream and are resampled for every chunk.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::envsim::{reset, step, EnvConfig, EnvState, EpisodeRecorder, Source, TrajectoryRecord, Vec2};
use crate::error::{ensure_width, Error, Result};
use crate::model::Model;
use crate::nn::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    /// Embedding straight into the head.
    Base,
    /// Latent sample `z ~ N(μ, (ασ)²)` decoded into the embedding.
    Explore,
    /// Gaussian noise added to the embedding, scaled by its training spread.
    CondNoise,
}

impl RolloutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RolloutMode::Base => "base",
            RolloutMode::Explore => "explore",
            RolloutMode::CondNoise => "cond-noise",
        }
    }
}

impl std::fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RolloutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(RolloutMode::Base),
            "explore" => Ok(RolloutMode::Explore),
            "cond-noise" => Ok(RolloutMode::CondNoise),
            other => Err(Error::config("mode", format!("unknown mode `{other}` (base | explore | cond-noise)"))),
        }
    }
}

/// Initial DDIM noise for chunk `chunk_index` of an episode started from `start_seed`.
pub fn chunk_noise(start_seed: u64, chunk_index: usize, width: usize) -> Vec<f64> {
    RngStream::new(start_seed, format!("rollout/chunk-noise/{chunk_index}")).normal_vec(width)
}

/// Stream for the exploration draws of one attempt.
pub fn attempt_stream(start_seed: u64, attempt: usize) -> RngStream {
    RngStream::new(start_seed, format!("rollout/explore/{attempt}"))
}

impl Model {
    /// Width of the per-chunk exploration draw for `mode`.
    pub fn exploration_width(&self, mode: RolloutMode) -> usize {
        match mode {
            RolloutMode::Base => 0,
            RolloutMode::Explore => self.plugin.as_ref().map_or(0, |p| p.latent_dim()),
            RolloutMode::CondNoise => self.policy.config.embed_dim,
        }
    }

    /// One chunk of raw actions per row of `observations`.
    ///
    /// `init` holds the initial DDIM noise (`n × H·A`), `draws` the
    /// standard-normal exploration draws (`n × exploration_width`).
    pub fn act_batch(
        &self,
        observations: &[Vec<f64>],
        mode: RolloutMode,
        alpha: f64,
        init: &Array2<f64>,
        draws: &Array2<f64>,
    ) -> Result<Vec<Vec<Vec2>>> {
        let n = observations.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let od = self.policy.config.obs_dim;
        let mut obs = Array2::zeros((n, od));
        for (r, o) in observations.iter().enumerate() {
            let norm = self.policy.normalize_observation(o)?;
            obs.row_mut(r).assign(&ndarray::ArrayView1::from(&norm[..]));
        }
        let mut cond = self.policy.encode_batch(obs.view())?;
        match mode {
            RolloutMode::Base => {}
            RolloutMode::Explore => {
                cond = self.plugin()?.explore_batch(cond.view(), alpha, draws.view())?;
            }
            RolloutMode::CondNoise => {
                ensure_width("condition noise", cond.ncols(), draws.ncols())?;
                for (mut row, d) in cond.rows_mut().into_iter().zip(draws.rows()) {
                    for i in 0..row.len() {
                        row[i] += alpha * self.embedding_std[i] * d[i];
                    }
                }
            }
        }
        let chunks = self.policy.ddim_sample_batch(cond.view(), init.view())?;
        Ok(chunks
            .rows()
            .into_iter()
            .map(|r| self.policy.chunk_to_actions(r.as_slice().expect("contiguous")))
            .collect())
    }
}

/// One episode to run: start seed plus attempt index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub start_seed: u64,
    pub attempt: usize,
}

struct Running {
    spec: EpisodeSpec,
    state: EnvState,
    recorder: EpisodeRecorder,
    stream: RngStream,
    done: bool,
}

/// Runs every episode to completion, in lockstep so each re-planning round is
/// one batched network evaluation. Output order follows `specs`.
pub fn run_episodes(
    model: &Model,
    env: &EnvConfig,
    specs: &[EpisodeSpec],
    mode: RolloutMode,
    alpha: f64,
    source: Source,
    round: usize,
) -> Result<Vec<TrajectoryRecord>> {
    model.check_env(env)?;
    if mode == RolloutMode::Explore {
        model.plugin()?;
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", "must be a finite value >= 0"));
    }
    let h = env.chunk_len;
    let width = model.policy.config.chunk_width();
    let dw = model.exploration_width(mode);
    let mut eps: Vec<Running> = specs
        .iter()
        .map(|&spec| {
            let (state, obs) = reset(env, spec.start_seed);
            Running {
                spec,
                recorder: EpisodeRecorder::new(env.name, spec.start_seed, source, round, obs),
                state,
                stream: attempt_stream(spec.start_seed, spec.attempt),
                done: false,
            }
        })
        .collect();

    loop {
        let active: Vec<usize> = (0..eps.len()).filter(|&i| !eps[i].done).collect();
        if active.is_empty() {
            break;
        }
        let n = active.len();
        let mut init = Array2::zeros((n, width));
        let mut draws = Array2::zeros((n, dw));
        let mut observations = Vec::with_capacity(n);
        for (r, &i) in active.iter().enumerate() {
            let e = &mut eps[i];
            let noise = chunk_noise(e.spec.start_seed, e.state.step / h, width);
            init.row_mut(r).assign(&ndarray::ArrayView1::from(&noise[..]));
            if dw > 0 {
                e.stream.fill_normal(draws.row_mut(r).into_slice().expect("contiguous"));
            }
            observations.push(e.recorder.current().final_observation.clone());
        }
        let chunks = model.act_batch(&observations, mode, alpha, &init, &draws)?;
        for (&i, chunk) in active.iter().zip(chunks) {
            let e = &mut eps[i];
            for a in chunk {
                let out = step(env, &mut e.state, a);
                e.recorder.push(out.applied_action, out.observation, out.success);
                if out.done {
                    e.done = true;
                    break;
                }
            }
        }
    }
    Ok(eps.into_iter().map(|e| e.recorder.finish()).collect())
}

/// Positions of the robot while executing `actions` from a copy of `state`;
/// padded with the last position if the episode ends early.
pub fn simulate_chunk(env: &EnvConfig, state: &EnvState, actions: &[Vec2]) -> Vec<Vec2> {
    let mut sim = state.clone();
    let mut points = Vec::with_capacity(actions.len() + 1);
    points.push(sim.robot);
    let mut done = sim.step >= env.horizon || sim.is_success(env.success_tol);
    for &a in actions {
        if !done {
            done = step(env, &mut sim, a).done;
        }
        points.push(sim.robot);
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parse_roundtrip() {
        for m in [RolloutMode::Base, RolloutMode::Explore, RolloutMode::CondNoise] {
            assert_eq!(m.as_str().parse::<RolloutMode>().unwrap(), m);
        }
        assert!(matches!("greedy".parse::<RolloutMode>(), Err(Error::Config { .. })));
    }

    #[test]
    fn chunk_noise_depends_on_start_and_index_only() {
        assert_eq!(chunk_noise(3, 1, 16), chunk_noise(3, 1, 16));
        assert_ne!(chunk_noise(3, 1, 16), chunk_noise(3, 2, 16));
        assert_ne!(chunk_noise(3, 1, 16), chunk_noise(4, 1, 16));
    }

    #[test]
    fn simulate_chunk_pads_after_done() {
        let env = EnvConfig::planar_reach();
        let (mut s, _) = reset(&env, 0);
        s.robot = [s.goal[0] - 0.02, s.goal[1]];
        let pts = simulate_chunk(&env, &s, &[[0.02, 0.0], [0.03, 0.0], [0.03, 0.0]]);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1], pts[3]);
    }
}
