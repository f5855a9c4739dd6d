//! Variational information bottleneck plug-in.
//!
//! The latent encoder maps a (detached) observation embedding to a diagonal
//! Gaussian; the decoder maps a latent sample back to an embedding that the
//! frozen noise head consumes. Perturbing the latent by `α σ` gives the
//! exploration path.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_width, Error, Result};
use crate::nn::{kl_diag_gaussian_to_standard, Checkpoint, DenseNet, NamedArray, NetGrads, RngStream, SIGMA_FLOOR};
use crate::policy::diffusion::ckpt_meta_object;
use crate::policy::loss::{check_batch, mse_with_grad, noisy_batch};
use crate::policy::{BaseGrads, DiffusionPolicy, NoiseDraw};

pub const SIGMA_CEIL: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VibConfig {
    /// KL weight β.
    pub beta: f64,
    /// Exploration scale α.
    pub alpha: f64,
    /// Latent width d.
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for VibConfig {
    fn default() -> Self {
        Self {
            beta: 0.001,
            alpha: 2.0,
            latent_dim: 16,
            hidden: vec![128, 128, 128],
        }
    }
}

impl VibConfig {
    /// Smaller exploration radius for settings where safety matters more.
    pub fn conservative() -> Self {
        Self {
            alpha: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be a finite value >= 0"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a finite value >= 0"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub embedding: Vec<f64>,
    pub z: Vec<f64>,
    pub latent: LatentGaussian,
}

#[derive(Debug, Clone)]
pub struct VibGrads {
    pub encoder: NetGrads,
    pub decoder: NetGrads,
}

#[derive(Debug, Clone)]
pub struct VibLoss {
    pub total: f64,
    pub reconstruction: f64,
    /// Batch mean of the per-sample KL (summed over latent dims).
    pub kl: f64,
    pub grads: VibGrads,
    /// Gradient reaching the base path through the detach boundaries.
    pub base: BaseGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VibPlugin {
    pub config: VibConfig,
    /// `p_θ`: embedding to `[μ, log σ]`.
    pub encoder: DenseNet,
    /// `q_φ`: latent to embedding.
    pub decoder: DenseNet,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn sigma_of(log_sigma: f64) -> (f64, bool) {
    let s = log_sigma.exp();
    if s < SIGMA_FLOOR {
        (SIGMA_FLOOR, true)
    } else if s > SIGMA_CEIL {
        (SIGMA_CEIL, true)
    } else {
        (s, false)
    }
}

impl VibPlugin {
    pub fn new(config: VibConfig, embed_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = RngStream::new(seed, "init/vib");
        let d = config.latent_dim;
        let encoder = DenseNet::new("vib.encoder", &widths(embed_dim, &config.hidden, 2 * d), &mut rng.child("encoder"))?;
        let decoder = DenseNet::new("vib.decoder", &widths(d, &config.hidden, embed_dim), &mut rng.child("decoder"))?;
        Self::from_parts(config, encoder, decoder)
    }

    pub fn zeros(config: VibConfig, embed_dim: usize) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let encoder = DenseNet::zeros("vib.encoder", &widths(embed_dim, &config.hidden, 2 * d))?;
        let decoder = DenseNet::zeros("vib.decoder", &widths(d, &config.hidden, embed_dim))?;
        Self::from_parts(config, encoder, decoder)
    }

    pub fn from_parts(config: VibConfig, encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        config.validate()?;
        ensure_width("latent encoder output", 2 * config.latent_dim, encoder.out_dim())?;
        ensure_width("latent decoder input", config.latent_dim, decoder.in_dim())?;
        ensure_width("latent decoder output", encoder.in_dim(), decoder.out_dim())?;
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    /// `(μ, σ)` rows for a batch of embeddings.
    pub fn encode_batch(&self, cond: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.encoder.infer(cond)?;
        let d = self.latent_dim();
        let mu = out.slice(s![.., ..d]).to_owned();
        let sigma = out.slice(s![.., d..]).mapv(|l| sigma_of(l).0);
        Ok((mu, sigma))
    }

    pub fn encode_latent(&self, c: &[f64]) -> Result<LatentGaussian> {
        ensure_width("embedding", self.embed_dim(), c.len())?;
        let cv = ArrayView2::from_shape((1, c.len()), c).expect("row view");
        let (mu, sigma) = self.encode_batch(cv)?;
        Ok(LatentGaussian {
            mu: mu.into_raw_vec_and_offset().0,
            sigma: sigma.into_raw_vec_and_offset().0,
        })
    }

    pub fn decode_latent(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_width("latent", self.latent_dim(), z.len())?;
        self.decoder.infer_one(z)
    }

    pub fn decode_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.decoder.infer(z)
    }

    /// Samples `z ~ N(μ, (ασ)²)` and decodes it.
    pub fn explore_embedding(&self, c: &[f64], alpha: f64, rng: &mut RngStream) -> Result<Exploration> {
        let latent = self.encode_latent(c)?;
        let z = crate::nn::reparam_sample(&latent.mu, &latent.sigma, alpha, rng)?;
        let embedding = self.decode_latent(&z)?;
        Ok(Exploration { embedding, z, latent })
    }

    /// Batched exploration with explicit standard-normal draws (`n × d`).
    pub fn explore_batch(&self, cond: ArrayView2<'_, f64>, alpha: f64, noise: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if !(alpha >= 0.0) {
            return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
        }
        let (mu, sigma) = self.encode_batch(cond)?;
        ensure_width("latent noise", self.latent_dim(), noise.ncols())?;
        ensure_width("latent noise rows", cond.nrows(), noise.nrows())?;
        let z = &mu + &(&sigma * &noise * alpha);
        self.decode_batch(z.view())
    }

    /// VIB loss with explicit noise; see [`vib_loss`].
    pub fn loss_with(
        &self,
        policy: &DiffusionPolicy,
        obs: ArrayView2<'_, f64>,
        chunks: ArrayView2<'_, f64>,
        draw: &NoiseDraw,
        latent_noise: ArrayView2<'_, f64>,
    ) -> Result<VibLoss> {
        check_batch(policy, obs, chunks)?;
        ensure_width("plug-in embedding", policy.config.embed_dim, self.embed_dim())?;
        let b = obs.nrows();
        let d = self.latent_dim();
        ensure_width("latent noise", d, latent_noise.ncols())?;
        ensure_width("latent noise rows", b, latent_noise.nrows())?;
        let beta = self.config.beta;

        // Detach: the embedding is computed without a trace.
        let cond = policy.encoder.infer(obs)?;
        let (stats, enc_trace) = self.encoder.forward_traced(cond.view())?;
        let mu = stats.slice(s![.., ..d]).to_owned();
        let mut sigma = Array2::zeros((b, d));
        let mut clamped = Array2::from_elem((b, d), false);
        for ((s, c), &l) in sigma.iter_mut().zip(clamped.iter_mut()).zip(stats.slice(s![.., d..]).iter()) {
            (*s, *c) = sigma_of(l);
        }
        let z = &mu + &(&sigma * &latent_noise);
        let (cond_tilde, dec_trace) = self.decoder.forward_traced(z.view())?;

        let noisy = noisy_batch(policy, chunks, draw);
        let input = policy.head_input(noisy.view(), cond_tilde.view(), &draw.ks)?;
        let (pred, head_trace) = policy.head.forward_traced(input.view())?;
        let (recon, dpred) = mse_with_grad(&pred, &draw.eps);
        // Frozen head: input gradient only.
        let (no_params, dinput) = policy.head.backward_traced(&head_trace, dpred.view(), false)?;
        debug_assert!(no_params.is_none());
        let cw = policy.config.chunk_width();
        let dcond = dinput.slice(s![.., cw..cw + policy.config.embed_dim]);
        let (dec_grads, dz) = self.decoder.backward_traced(&dec_trace, dcond, true)?;

        let mut kl = 0.0;
        for r in 0..b {
            kl += kl_diag_gaussian_to_standard(
                mu.row(r).as_slice().expect("contiguous"),
                sigma.row(r).as_slice().expect("contiguous"),
            )?;
        }
        kl /= b as f64;

        let mut dstats = Array2::zeros((b, 2 * d));
        let scale = beta / b as f64;
        for r in 0..b {
            for i in 0..d {
                let (m, sg) = (mu[[r, i]], sigma[[r, i]]);
                dstats[[r, i]] = dz[[r, i]] + scale * m;
                if !clamped[[r, i]] {
                    // d/d log σ of (σ ε) is σ ε; of ½(σ² − ln σ²) is σ² − 1.
                    dstats[[r, d + i]] = dz[[r, i]] * sg * latent_noise[[r, i]] + scale * (sg * sg - 1.0);
                }
            }
        }
        let (enc_grads, _) = self.encoder.backward_traced(&enc_trace, dstats.view(), true)?;
        Ok(VibLoss {
            total: recon + beta * kl,
            reconstruction: recon,
            kl,
            grads: VibGrads {
                encoder: enc_grads.expect("requested"),
                decoder: dec_grads.expect("requested"),
            },
            base: BaseGrads {
                encoder: NetGrads::zeros_like(&policy.encoder),
                head: NetGrads::zeros_like(&policy.head),
            },
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.insert(self.encoder.to_named("vib.encoder"));
        ckpt.insert(self.decoder.to_named("vib.decoder"));
        ckpt_meta_object(ckpt).insert("vib".into(), serde_json::to_value(&self.config)?);
        Ok(())
    }

    /// `Ok(None)` when the checkpoint carries no plug-in.
    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Option<Self>> {
        if !ckpt.has_namespace("vib") {
            return Ok(None);
        }
        let config: VibConfig = serde_json::from_value(
            ckpt.meta
                .get("vib")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("plug-in arrays present but config missing".into()))?,
        )?;
        let lookup = |n: &str| -> Option<NamedArray> { ckpt.get(n) };
        let encoder = DenseNet::from_named("vib.encoder", "vib.encoder", lookup)?;
        let decoder = DenseNet::from_named("vib.decoder", "vib.decoder", lookup)?;
        Self::from_parts(config, encoder, decoder).map(Some)
    }
}

/// `mean ‖ε − ε_ψ(a^k, q_φ(z), k)‖² + β · mean_batch KL(p_θ(Z|o) ‖ N(0, I))`
/// with `z = μ + σ ⊙ ε_z`. Gradients flow into `p_θ` and `q_φ` only.
pub fn vib_loss(
    plugin: &VibPlugin,
    policy: &DiffusionPolicy,
    obs: ArrayView2<'_, f64>,
    chunks: ArrayView2<'_, f64>,
    rng: &mut RngStream,
) -> Result<VibLoss> {
    check_batch(policy, obs, chunks)?;
    let b = obs.nrows();
    let draw = NoiseDraw::sample(b, policy.config.chunk_width(), policy.schedule.steps(), rng);
    let mut latent_noise = Array2::zeros((b, plugin.latent_dim()));
    for mut row in latent_noise.axis_iter_mut(Axis(0)) {
        rng.fill_normal(row.as_slice_mut().expect("contiguous"));
    }
    plugin.loss_with(policy, obs, chunks, &draw, latent_noise.view())
}
