use ndarray::{Array2, ArrayView2, Axis};

use crate::envsim::TrajectoryRecord;
use crate::error::{ensure_width, Error, Result};
use crate::nn::RngStream;
use crate::policy::normalize::{MinMax, Normalizer};

/// Raw `(o_t, a_{t:t+H})` windows; chunks running past the episode end are
/// padded with zero actions (hold still).
pub fn raw_windows(records: &[TrajectoryRecord], chunk_len: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut obs = Vec::new();
    let mut chunks = Vec::new();
    for r in records {
        for t in 0..r.len() {
            obs.push(r.observations[t].clone());
            let mut chunk = Vec::with_capacity(chunk_len * 2);
            for j in 0..chunk_len {
                let a = r.actions.get(t + j).copied().unwrap_or([0.0, 0.0]);
                chunk.extend_from_slice(&a);
            }
            chunks.push(chunk);
        }
    }
    (obs, chunks)
}

/// Normalized training pairs, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub observations: Array2<f64>,
    pub chunks: Array2<f64>,
}

impl TrainingSet {
    pub fn new(observations: Array2<f64>, chunks: Array2<f64>) -> Result<Self> {
        ensure_width("training rows", observations.nrows(), chunks.nrows())?;
        if observations.nrows() == 0 {
            return Err(Error::Input("training set is empty".into()));
        }
        Ok(Self { observations, chunks })
    }

    /// Fits normalization stats on `records` and returns both.
    pub fn fit(records: &[TrajectoryRecord], obs_dim: usize, chunk_len: usize) -> Result<(Self, Normalizer)> {
        let (obs, chunks) = raw_windows(records, chunk_len);
        if obs.is_empty() {
            return Err(Error::Input("no transitions in dataset".into()));
        }
        let observation = MinMax::fit(obs_dim, obs.iter().map(|o| o.as_slice()))?;
        let action = MinMax::fit(2, chunks.iter().flat_map(|c| c.chunks(2)))?;
        let norm = Normalizer { observation, action };
        Ok((Self::with_normalizer(records, &norm, chunk_len)?, norm))
    }

    /// Windows normalized with existing stats.
    pub fn with_normalizer(records: &[TrajectoryRecord], norm: &Normalizer, chunk_len: usize) -> Result<Self> {
        let (obs, chunks) = raw_windows(records, chunk_len);
        if obs.is_empty() {
            return Err(Error::Input("no transitions in dataset".into()));
        }
        let od = norm.observation.dim();
        let mut o = Array2::zeros((obs.len(), od));
        let mut c = Array2::zeros((chunks.len(), chunk_len * 2));
        for (i, (ob, ch)) in obs.iter().zip(&chunks).enumerate() {
            ensure_width("observation", od, ob.len())?;
            o.row_mut(i).assign(&ndarray::ArrayView1::from(&norm.observation.normalize(ob)[..]));
            c.row_mut(i).assign(&ndarray::ArrayView1::from(&norm.action.normalize(ch)[..]));
        }
        Self::new(o, c)
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> (Array2<f64>, Array2<f64>) {
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(self.len())).collect();
        (self.observations.select(Axis(0), &idx), self.chunks.select(Axis(0), &idx))
    }

    pub fn observations(&self) -> ArrayView2<'_, f64> {
        self.observations.view()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{generate_demos, EnvConfig};

    #[test]
    fn windows_pad_with_zeros() {
        let cfg = EnvConfig::planar_reach();
        let demos = generate_demos(&cfg, 1, 0).unwrap();
        let (obs, chunks) = raw_windows(&demos, 8);
        let t = demos[0].len();
        assert_eq!(obs.len(), t);
        assert_eq!(chunks[0][..2], demos[0].actions[0]);
        assert!(chunks[t - 1][2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fitted_set_is_in_unit_box() {
        let cfg = EnvConfig::planar_reach();
        let demos = generate_demos(&cfg, 3, 0).unwrap();
        let (set, _) = TrainingSet::fit(&demos, 7, 8).unwrap();
        assert!(set.observations.iter().chain(set.chunks.iter()).all(|v| v.abs() <= 1.0 + 1e-12));
        let (o, c) = set.sample(5, &mut RngStream::new(0, "b"));
        assert_eq!((o.nrows(), c.ncols()), (5, 16));
    }
}
