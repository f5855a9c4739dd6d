use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analysis::fps::farthest_point_sampling;
use crate::envsim::{EnvConfig, EnvState, Vec2};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rollout::{chunk_noise, simulate_chunk};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: usize,
    /// Offset along the dimension, in units of `σ[dim]`.
    pub offset: f64,
    pub actions: Vec<Vec2>,
    /// Robot positions from the current state through the chunk.
    pub trajectory: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub dim: usize,
    pub proposals: Vec<Proposal>,
}

/// `batch` offsets evenly spaced over `[-span, span]` (a single offset is 0).
pub fn offsets(batch: usize, span: f64) -> Vec<f64> {
    if batch == 1 {
        return vec![0.0];
    }
    (0..batch)
        .map(|j| -span + 2.0 * span * j as f64 / (batch - 1) as f64)
        .collect()
}

/// Index of the trajectory whose endpoint lies farthest from the mean
/// endpoint (lowest index on ties).
pub fn fps_start(trajectories: &[Vec<Vec2>]) -> usize {
    let n = trajectories.len() as f64;
    let ends: Vec<Vec2> = trajectories.iter().map(|t| *t.last().expect("nonempty")).collect();
    let mean = [ends.iter().map(|e| e[0]).sum::<f64>() / n, ends.iter().map(|e| e[1]).sum::<f64>() / n];
    let mut best = (0, f64::NEG_INFINITY);
    for (i, e) in ends.iter().enumerate() {
        let d = (e[0] - mean[0]).hypot(e[1] - mean[1]);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Every candidate along `dim`, before FPS selection.
pub fn candidates_along_dimension(
    model: &Model,
    env: &EnvConfig,
    state: &EnvState,
    dim: usize,
    batch: usize,
    span: f64,
) -> Result<Vec<Proposal>> {
    let plugin = model.plugin()?;
    if dim >= plugin.latent_dim() {
        return Err(Error::Index {
            index: dim,
            lo: 0,
            hi: plugin.latent_dim() - 1,
        });
    }
    if batch == 0 {
        return Err(Error::Input("batch must be at least 1".into()));
    }
    if !(span >= 0.0 && span.is_finite()) {
        return Err(Error::config("span", "must be a finite value >= 0"));
    }
    let c = model.policy.encode_observation(&state.observation())?;
    let latent = plugin.encode_latent(&c)?;
    let offs = offsets(batch, span);
    let d = plugin.latent_dim();
    let mut z = Array2::zeros((batch, d));
    for (r, &s) in offs.iter().enumerate() {
        for i in 0..d {
            z[[r, i]] = latent.mu[i];
        }
        z[[r, dim]] += s * latent.sigma[dim];
    }
    let cond = plugin.decode_batch(z.view())?;
    let width = model.policy.config.chunk_width();
    let noise = chunk_noise(state.seed, state.step / env.chunk_len, width);
    let init = Array2::from_shape_fn((batch, width), |(_, j)| noise[j]);
    let chunks = model.policy.ddim_sample_batch(cond.view(), init.view())?;
    Ok(chunks
        .rows()
        .into_iter()
        .zip(offs)
        .enumerate()
        .map(|(id, (row, offset))| {
            let actions = model.policy.chunk_to_actions(row.as_slice().expect("contiguous"));
            let trajectory = simulate_chunk(env, state, &actions);
            Proposal {
                id,
                offset,
                actions,
                trajectory,
            }
        })
        .collect())
}

/// `batch` proposals along latent dimension `dim`, reduced to `k` by farthest
/// point sampling over their simulated trajectories.
pub fn propose_along_dimension(
    model: &Model,
    env: &EnvConfig,
    state: &EnvState,
    dim: usize,
    batch: usize,
    k: usize,
    span: f64,
) -> Result<ProposalSet> {
    if k == 0 || batch < k {
        return Err(Error::Input(format!("need 1 <= k <= batch, got k = {k}, batch = {batch}")));
    }
    let all = candidates_along_dimension(model, env, state, dim, batch, span)?;
    let trajectories: Vec<Vec<Vec2>> = all.iter().map(|p| p.trajectory.clone()).collect();
    let flat: Vec<Vec<f64>> = trajectories.iter().map(|t| t.iter().flatten().copied().collect()).collect();
    let picked = farthest_point_sampling(&flat, k, fps_start(&trajectories))?;
    Ok(ProposalSet {
        dim,
        proposals: picked.into_iter().map(|i| all[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_span_range() {
        assert_eq!(offsets(1, 3.0), vec![0.0]);
        assert_eq!(offsets(3, 3.0), vec![-3.0, 0.0, 3.0]);
        let o = offsets(64, 3.0);
        assert_eq!((o[0], o[63]), (-3.0, 3.0));
    }

    #[test]
    fn fps_start_picks_outlier() {
        let t = vec![vec![[0.0, 0.0]], vec![[0.1, 0.0]], vec![[1.0, 1.0]], vec![[0.0, 0.1]]];
        assert_eq!(fps_start(&t), 2);
    }
}
