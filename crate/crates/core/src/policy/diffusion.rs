use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::envsim::{Vec2, ACTION_DIM};
use crate::error::{ensure_width, Error, Result};
use crate::nn::{Checkpoint, DenseNet, NamedArray, RngStream};
use crate::policy::normalize::Normalizer;
use crate::policy::schedule::{NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Chunk length H.
    pub chunk_len: usize,
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    /// Training diffusion steps K.
    pub diffusion_steps: usize,
    pub inference_steps: usize,
    pub schedule: ScheduleKind,
    pub step_code_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            obs_dim: 7,
            action_dim: ACTION_DIM,
            chunk_len: 8,
            embed_dim: 32,
            encoder_hidden: vec![64, 64],
            head_hidden: vec![128, 128],
            diffusion_steps: 16,
            inference_steps: 8,
            schedule: ScheduleKind::SquaredCosine,
            step_code_dim: 8,
        }
    }
}

impl PolicyConfig {
    pub fn chunk_width(&self) -> usize {
        self.chunk_len * self.action_dim
    }

    pub fn head_input_dim(&self) -> usize {
        self.chunk_width() + self.embed_dim + self.step_code_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("obs_dim", self.obs_dim),
            ("action_dim", self.action_dim),
            ("chunk_len", self.chunk_len),
            ("embed_dim", self.embed_dim),
            ("diffusion_steps", self.diffusion_steps),
            ("inference_steps", self.inference_steps),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.inference_steps > self.diffusion_steps {
            return Err(Error::config("inference_steps", "cannot exceed diffusion_steps"));
        }
        if self.step_code_dim % 2 != 0 {
            return Err(Error::config("step_code_dim", "must be even"));
        }
        if self.encoder_hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Fixed sinusoidal code for diffusion step `k`.
pub fn step_code(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let w = 10_000f64.powf(-(i as f64) / half as f64);
        out.push((k as f64 * w).sin());
        out.push((k as f64 * w).cos());
    }
    out
}

/// Observation encoder and noise-prediction head over normalized chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub config: PolicyConfig,
    pub encoder: DenseNet,
    pub head: DenseNet,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl DiffusionPolicy {
    pub fn new(config: PolicyConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = RngStream::new(seed, "init/policy");
        let encoder = DenseNet::new(
            "policy.encoder",
            &widths(config.obs_dim, &config.encoder_hidden, config.embed_dim),
            &mut rng.child("encoder"),
        )?;
        let head = DenseNet::new(
            "policy.head",
            &widths(config.head_input_dim(), &config.head_hidden, config.chunk_width()),
            &mut rng.child("head"),
        )?;
        Self::from_parts(config, encoder, head, normalizer)
    }

    /// All-zero parameters.
    pub fn zeros(config: PolicyConfig, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        let encoder = DenseNet::zeros(
            "policy.encoder",
            &widths(config.obs_dim, &config.encoder_hidden, config.embed_dim),
        )?;
        let head = DenseNet::zeros(
            "policy.head",
            &widths(config.head_input_dim(), &config.head_hidden, config.chunk_width()),
        )?;
        Self::from_parts(config, encoder, head, normalizer)
    }

    pub fn from_parts(config: PolicyConfig, encoder: DenseNet, head: DenseNet, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        ensure_width("encoder input", config.obs_dim, encoder.in_dim())?;
        ensure_width("encoder output", config.embed_dim, encoder.out_dim())?;
        ensure_width("head input", config.head_input_dim(), head.in_dim())?;
        ensure_width("head output", config.chunk_width(), head.out_dim())?;
        ensure_width("observation normalizer", config.obs_dim, normalizer.observation.dim())?;
        ensure_width("action normalizer", config.action_dim, normalizer.action.dim())?;
        let schedule = NoiseSchedule::new(config.diffusion_steps, config.schedule)?;
        Ok(Self {
            config,
            encoder,
            head,
            schedule,
            normalizer,
        })
    }

    pub fn normalize_observation(&self, o: &[f64]) -> Result<Vec<f64>> {
        ensure_width("observation", self.config.obs_dim, o.len())?;
        Ok(self.normalizer.observation.normalize(o))
    }

    /// `c = E(o)` for a raw observation.
    pub fn encode_observation(&self, o: &[f64]) -> Result<Vec<f64>> {
        let n = self.normalize_observation(o)?;
        self.encoder.infer_one(&n)
    }

    /// Embeddings for a batch of normalized observations.
    pub fn encode_batch(&self, obs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.encoder.infer(obs)
    }

    /// Assembles `[a^k, c, code(k)]` rows.
    pub(crate) fn head_input(&self, noisy: ArrayView2<'_, f64>, cond: ArrayView2<'_, f64>, ks: &[usize]) -> Result<Array2<f64>> {
        let cw = self.config.chunk_width();
        let e = self.config.embed_dim;
        ensure_width("noisy chunk", cw, noisy.ncols())?;
        ensure_width("embedding", e, cond.ncols())?;
        ensure_width("embedding rows", noisy.nrows(), cond.nrows())?;
        ensure_width("step list", noisy.nrows(), ks.len())?;
        let mut x = Array2::zeros((noisy.nrows(), self.config.head_input_dim()));
        x.slice_mut(s![.., ..cw]).assign(&noisy);
        x.slice_mut(s![.., cw..cw + e]).assign(&cond);
        for (r, &k) in ks.iter().enumerate() {
            for (j, v) in step_code(k, self.config.step_code_dim).into_iter().enumerate() {
                x[[r, cw + e + j]] = v;
            }
        }
        Ok(x)
    }

    /// `ε_ψ(a^k, c, k)` for one normalized chunk.
    pub fn predict_noise(&self, noisy: &[f64], c: &[f64], k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.schedule.steps() {
            return Err(Error::Index {
                index: k,
                lo: 1,
                hi: self.schedule.steps(),
            });
        }
        let nv = ArrayView2::from_shape((1, noisy.len()), noisy).expect("row view");
        let cv = ArrayView2::from_shape((1, c.len()), c).expect("row view");
        let x = self.head_input(nv, cv, &[k])?;
        Ok(self.head.infer(x.view())?.into_raw_vec_and_offset().0)
    }

    /// Batched DDIM sampling from explicit initial noise; returns normalized
    /// chunks (the final `x̂0`).
    pub fn ddim_sample_batch(&self, cond: ArrayView2<'_, f64>, init: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let steps = self.schedule.inference_steps(self.config.inference_steps)?;
        let n = init.nrows();
        let cw = self.config.chunk_width();
        let mut x = init.to_owned();
        let mut x0 = Array2::zeros((n, cw));
        for (i, &k) in steps.iter().enumerate() {
            let k_prev = steps.get(i + 1).copied().unwrap_or(0);
            let input = self.head_input(x.view(), cond, &vec![k; n])?;
            let eps = self.head.infer(input.view())?;
            let mut next = Array2::zeros((n, cw));
            for r in 0..n {
                self.schedule.ddim_step_into(
                    x.row(r).as_slice().expect("contiguous"),
                    eps.row(r).as_slice().expect("contiguous"),
                    k,
                    k_prev,
                    x0.row_mut(r).into_slice().expect("contiguous"),
                    next.row_mut(r).into_slice().expect("contiguous"),
                );
            }
            x = next;
        }
        Ok(x0)
    }

    /// Samples one normalized chunk for embedding `c`, drawing the initial
    /// noise from `rng`.
    pub fn ddim_sample(&self, c: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let init = rng.normal_vec(self.config.chunk_width());
        let cv = ArrayView2::from_shape((1, c.len()), c).expect("row view");
        let iv = ArrayView2::from_shape((1, init.len()), &init[..]).expect("row view");
        Ok(self.ddim_sample_batch(cv, iv)?.into_raw_vec_and_offset().0)
    }

    /// Normalized chunk back to per-step raw actions.
    pub fn chunk_to_actions(&self, normalized: &[f64]) -> Vec<Vec2> {
        let raw = self.normalizer.action.denormalize(normalized);
        raw.chunks(self.config.action_dim)
            .map(|a| [a[0], a.get(1).copied().unwrap_or(0.0)])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.head.num_params()
    }

    /// SHA-256 over encoder then head parameters.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for net in [&self.encoder, &self.head] {
            for v in net.flatten_params() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        crate::nn::dense::hex_digest(&bytes)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.insert(self.encoder.to_named("policy.encoder"));
        ckpt.insert(self.head.to_named("policy.head"));
        let meta = ckpt_meta_object(ckpt);
        meta.insert("policy".into(), serde_json::to_value(&self.config)?);
        meta.insert("normalizer".into(), serde_json::to_value(&self.normalizer)?);
        Ok(())
    }

    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: PolicyConfig = serde_json::from_value(
            ckpt.meta
                .get("policy")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing policy config".into()))?,
        )?;
        let normalizer: Normalizer = serde_json::from_value(
            ckpt.meta
                .get("normalizer")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing normalizer".into()))?,
        )?;
        let lookup = |n: &str| -> Option<NamedArray> { ckpt.get(n) };
        let encoder = DenseNet::from_named("policy.encoder", "policy.encoder", lookup)?;
        let head = DenseNet::from_named("policy.head", "policy.head", lookup)?;
        Self::from_parts(config, encoder, head, normalizer)
    }
}

pub(crate) fn ckpt_meta_object(ckpt: &mut Checkpoint) -> &mut serde_json::Map<String, serde_json::Value> {
    if !ckpt.meta.is_object() {
        ckpt.meta = serde_json::Value::Object(Default::default());
    }
    ckpt.meta.as_object_mut().expect("object")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PolicyConfig {
        PolicyConfig {
            obs_dim: 3,
            chunk_len: 2,
            embed_dim: 4,
            encoder_hidden: vec![5],
            head_hidden: vec![6],
            diffusion_steps: 4,
            inference_steps: 2,
            step_code_dim: 4,
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn zero_policy_outputs_zero() {
        let cfg = small_config();
        let p = DiffusionPolicy::zeros(cfg.clone(), Normalizer::identity(3, 2)).unwrap();
        assert_eq!(p.encode_observation(&[0.3, -0.2, 0.9]).unwrap(), vec![0.0; 4]);
        assert_eq!(p.predict_noise(&[0.1; 4], &[0.5; 4], 3).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn shape_errors() {
        let p = DiffusionPolicy::new(small_config(), Normalizer::identity(3, 2), 1).unwrap();
        assert!(matches!(p.encode_observation(&[0.0; 4]), Err(Error::Shape { .. })));
        assert!(p.predict_noise(&[0.0; 3], &[0.0; 4], 1).is_err());
        assert!(p.predict_noise(&[0.0; 4], &[0.0; 4], 0).is_err());
        assert!(p.predict_noise(&[0.0; 4], &[0.0; 4], 5).is_err());
    }

    #[test]
    fn encode_golden_and_deterministic() {
        let p = DiffusionPolicy::new(small_config(), Normalizer::identity(3, 2), 7).unwrap();
        let o = [0.25, -0.5, 0.75];
        let c = p.encode_observation(&o).unwrap();
        assert_eq!(c, p.encode_observation(&o).unwrap());
        let golden = GOLDEN_EMBEDDING;
        for (a, b) in c.iter().zip(golden) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn predict_noise_golden() {
        let p = DiffusionPolicy::new(small_config(), Normalizer::identity(3, 2), 7).unwrap();
        let eps = p.predict_noise(&[0.1, -0.2, 0.3, -0.4], &[0.5, 0.0, -0.5, 1.0], 3).unwrap();
        assert_eq!(eps, p.predict_noise(&[0.1, -0.2, 0.3, -0.4], &[0.5, 0.0, -0.5, 1.0], 3).unwrap());
        for (a, b) in eps.iter().zip(GOLDEN_NOISE) {
            assert!((a - b).abs() < 1e-12, "{eps:?}");
        }
    }

    // frozen from the first verified run (seed 7, identity normalizer)
    const GOLDEN_EMBEDDING: [f64; 4] = [0.7289426221182338, -1.1054271920733492, -0.5716237395377854, -0.9825422799469916];
    const GOLDEN_NOISE: [f64; 4] = [-0.436637522996725, -0.08264622215430442, 0.6410568829249104, 0.22829752432374628];

    #[test]
    fn step_code_shape() {
        let c = step_code(3, 8);
        assert_eq!(c.len(), 8);
        assert_eq!(c[0], 3f64.sin());
        assert_eq!(c[1], 3f64.cos());
    }

    #[test]
    fn ddim_sampler_is_deterministic_and_bounded() {
        let p = DiffusionPolicy::new(small_config(), Normalizer::identity(3, 2), 3).unwrap();
        let c = p.encode_observation(&[0.1, 0.2, 0.3]).unwrap();
        let a = p.ddim_sample(&c, &mut RngStream::new(5, "t")).unwrap();
        let b = p.ddim_sample(&c, &mut RngStream::new(5, "t")).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = DiffusionPolicy::new(small_config(), Normalizer::identity(3, 2), 3).unwrap();
        let mut ck = Checkpoint::default();
        p.write_checkpoint(&mut ck).unwrap();
        let back = DiffusionPolicy::read_checkpoint(&Checkpoint::from_json(&ck.to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.checksum(), p.checksum());
    }
}
