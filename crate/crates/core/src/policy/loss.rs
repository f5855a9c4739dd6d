use ndarray::{s, Array2, ArrayView2};

use crate::error::{ensure_width, Error, Result};
use crate::nn::{NetGrads, RngStream};
use crate::policy::diffusion::DiffusionPolicy;

/// Gradients for the base path (encoder and noise head).
#[derive(Debug, Clone)]
pub struct BaseGrads {
    pub encoder: NetGrads,
    pub head: NetGrads,
}

impl BaseGrads {
    pub fn max_abs(&self) -> f64 {
        self.encoder.max_abs().max(self.head.max_abs())
    }
}

/// Per-sample diffusion step and noise for one loss evaluation.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub ks: Vec<usize>,
    pub eps: Array2<f64>,
}

impl NoiseDraw {
    /// `k` uniform in `1..=K`, then ε for that row, row by row.
    pub fn sample(batch: usize, width: usize, steps: usize, rng: &mut RngStream) -> Self {
        let mut ks = Vec::with_capacity(batch);
        let mut eps = Array2::zeros((batch, width));
        for r in 0..batch {
            ks.push(1 + rng.below(steps));
            rng.fill_normal(eps.row_mut(r).into_slice().expect("contiguous"));
        }
        Self { ks, eps }
    }
}

/// Rows of `a^k` for a batch of clean chunks.
pub(crate) fn noisy_batch(policy: &DiffusionPolicy, chunks: ArrayView2<'_, f64>, draw: &NoiseDraw) -> Array2<f64> {
    let mut out = Array2::zeros(chunks.raw_dim());
    for r in 0..chunks.nrows() {
        let row = policy.schedule.add_noise_unchecked(
            chunks.row(r).as_slice().expect("contiguous"),
            draw.eps.row(r).as_slice().expect("contiguous"),
            draw.ks[r],
        );
        out.row_mut(r).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    out
}

/// Mean squared error and its gradient with respect to `pred`.
pub(crate) fn mse_with_grad(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

pub(crate) fn check_batch(policy: &DiffusionPolicy, obs: ArrayView2<'_, f64>, chunks: ArrayView2<'_, f64>) -> Result<()> {
    if obs.nrows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    ensure_width("batch observation", policy.config.obs_dim, obs.ncols())?;
    ensure_width("batch chunk", policy.config.chunk_width(), chunks.ncols())?;
    ensure_width("batch rows", obs.nrows(), chunks.nrows())
}

/// Imitation loss with explicit noise; see [`imitation_loss`].
pub fn imitation_loss_with(
    policy: &DiffusionPolicy,
    obs: ArrayView2<'_, f64>,
    chunks: ArrayView2<'_, f64>,
    draw: &NoiseDraw,
) -> Result<(f64, BaseGrads)> {
    check_batch(policy, obs, chunks)?;
    ensure_width("noise rows", obs.nrows(), draw.ks.len())?;
    let (cond, enc_trace) = policy.encoder.forward_traced(obs)?;
    let noisy = noisy_batch(policy, chunks, draw);
    let input = policy.head_input(noisy.view(), cond.view(), &draw.ks)?;
    let (pred, head_trace) = policy.head.forward_traced(input.view())?;
    let (loss, dpred) = mse_with_grad(&pred, &draw.eps);
    let (head_grads, dinput) = policy.head.backward_traced(&head_trace, dpred.view(), true)?;
    let cw = policy.config.chunk_width();
    let dcond = dinput.slice(s![.., cw..cw + policy.config.embed_dim]);
    let (enc_grads, _) = policy.encoder.backward_traced(&enc_trace, dcond, true)?;
    Ok((
        loss,
        BaseGrads {
            encoder: enc_grads.expect("requested"),
            head: head_grads.expect("requested"),
        },
    ))
}

/// `mean ‖ε − ε_ψ(a^k, E(o), k)‖²` (per element) over normalized `(o, a0)`
/// rows, with gradients for the encoder and head.
pub fn imitation_loss(
    policy: &DiffusionPolicy,
    obs: ArrayView2<'_, f64>,
    chunks: ArrayView2<'_, f64>,
    rng: &mut RngStream,
) -> Result<(f64, BaseGrads)> {
    check_batch(policy, obs, chunks)?;
    let draw = NoiseDraw::sample(obs.nrows(), policy.config.chunk_width(), policy.schedule.steps(), rng);
    imitation_loss_with(policy, obs, chunks, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rel_error;
    use crate::policy::{Normalizer, PolicyConfig};

    fn cfg() -> PolicyConfig {
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

    fn batch(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut r = RngStream::new(seed, "batch");
        let o = Array2::from_shape_fn((n, 3), |_| r.uniform_range(-1.0, 1.0));
        let a = Array2::from_shape_fn((n, 4), |_| r.uniform_range(-1.0, 1.0));
        (o, a)
    }

    #[test]
    fn zero_head_loss_is_mean_square_noise() {
        let p = DiffusionPolicy::zeros(cfg(), Normalizer::identity(3, 2)).unwrap();
        let (o, a) = batch(2000, 1);
        let (loss, _) = imitation_loss(&p, o.view(), a.view(), &mut RngStream::new(2, "l")).unwrap();
        assert!((loss - 1.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn empty_batch_rejected() {
        let p = DiffusionPolicy::zeros(cfg(), Normalizer::identity(3, 2)).unwrap();
        let e = Array2::<f64>::zeros((0, 3));
        let c = Array2::<f64>::zeros((0, 4));
        assert!(matches!(
            imitation_loss(&p, e.view(), c.view(), &mut RngStream::new(0, "l")),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn loss_matches_per_sample_loop() {
        let p = DiffusionPolicy::new(cfg(), Normalizer::identity(3, 2), 4).unwrap();
        let (o, a) = batch(6, 3);
        let draw = NoiseDraw::sample(6, 4, 4, &mut RngStream::new(9, "l"));
        let (loss, _) = imitation_loss_with(&p, o.view(), a.view(), &draw).unwrap();
        let mut total = 0.0;
        for r in 0..6 {
            let c = p.encoder.infer_one(o.row(r).as_slice().unwrap()).unwrap();
            let x = p.schedule.add_noise(a.row(r).as_slice().unwrap(), draw.eps.row(r).as_slice().unwrap(), draw.ks[r]).unwrap();
            let e = p.predict_noise(&x, &c, draw.ks[r]).unwrap();
            for (j, v) in e.iter().enumerate() {
                total += (v - draw.eps[[r, j]]).powi(2);
            }
        }
        assert!((loss - total / 24.0).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = DiffusionPolicy::new(cfg(), Normalizer::identity(3, 2), 4).unwrap();
        let (o, a) = batch(5, 3);
        let draw = NoiseDraw::sample(5, 4, 4, &mut RngStream::new(9, "l"));
        let (_, g) = imitation_loss_with(&p, o.view(), a.view(), &draw).unwrap();
        let analytic: Vec<f64> = g.encoder.flatten().into_iter().chain(g.head.flatten()).collect();
        let base: Vec<f64> = p.encoder.flatten_params().into_iter().chain(p.head.flatten_params()).collect();
        let ne = p.encoder.num_params();
        let h = 1e-5;
        let eval = |flat: &[f64]| {
            let mut q = p.clone();
            q.encoder.set_flat_params(&flat[..ne]).unwrap();
            q.head.set_flat_params(&flat[ne..]).unwrap();
            imitation_loss_with(&q, o.view(), a.view(), &draw).unwrap().0
        };
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                (eval(&plus) - eval(&minus)) / (2.0 * h)
            })
            .collect();
        let err = rel_error(&analytic, &numeric);
        assert!(err < 1e-4, "{err}");
    }
}
