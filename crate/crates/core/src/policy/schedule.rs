//! Diffusion noise schedules.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_width, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScheduleKind {
    #[default]
    SquaredCosine,
    Linear { beta_start: f64, beta_end: f64 },
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-cosine" | "squaredcos" => Ok(ScheduleKind::SquaredCosine),
            "linear" => Ok(ScheduleKind::Linear {
                beta_start: 1e-4,
                beta_end: 0.02,
            }),
            other => Err(Error::config("schedule", format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    /// `betas[k - 1]` is β_k for k in 1..=K.
    pub betas: Vec<f64>,
    /// `alpha_bar[k]` for k in 0..=K, with `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion_steps", "need at least one diffusion step"));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::SquaredCosine => {
                let s = 0.008;
                let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=steps)
                    .map(|k| (1.0 - f(k as f64) / f((k - 1) as f64)).min(0.999))
                    .collect()
            }
            ScheduleKind::Linear { beta_start, beta_end } => {
                if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(Error::config("schedule", "linear betas must satisfy 0 < start <= end < 1"));
                }
                if steps == 1 {
                    vec![beta_start]
                } else {
                    (0..steps)
                        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                        .collect()
                }
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().expect("seeded with 1");
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self {
            kind,
            betas,
            alpha_bar,
        })
    }

    /// Number of training diffusion steps K.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Index {
                index: k,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(())
    }

    /// `a^k = sqrt(ᾱ_k) a0 + sqrt(1 − ᾱ_k) ε`.
    pub fn add_noise(&self, a0: &[f64], eps: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_step(k)?;
        ensure_width("add_noise eps", a0.len(), eps.len())?;
        Ok(self.add_noise_unchecked(a0, eps, k))
    }

    pub(crate) fn add_noise_unchecked(&self, a0: &[f64], eps: &[f64], k: usize) -> Vec<f64> {
        let ab = self.alpha_bar[k];
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        a0.iter().zip(eps).map(|(a, e)| sa * a + sn * e).collect()
    }

    /// Descending DDIM timesteps `t_0 = K > t_1 > … > t_{n-1} ≥ 1`.
    pub fn inference_steps(&self, n: usize) -> Result<Vec<usize>> {
        let k = self.steps();
        if n == 0 || n > k {
            return Err(Error::config("inference_steps", format!("must lie in 1..={k}")));
        }
        Ok((0..n).map(|i| k - i * k / n).collect())
    }

    /// One deterministic (η = 0) DDIM update from step `k` to `k_prev`.
    ///
    /// Returns `(x̂0, x_{k_prev})`; `x̂0` is clipped to `[-1, 1]`.
    pub fn ddim_step(&self, x_k: &[f64], eps_hat: &[f64], k: usize, k_prev: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_step(k)?;
        if k_prev >= k {
            return Err(Error::Index {
                index: k_prev,
                lo: 0,
                hi: k - 1,
            });
        }
        ensure_width("ddim eps", x_k.len(), eps_hat.len())?;
        let mut x0 = vec![0.0; x_k.len()];
        let mut prev = vec![0.0; x_k.len()];
        self.ddim_step_into(x_k, eps_hat, k, k_prev, &mut x0, &mut prev);
        Ok((x0, prev))
    }

    pub(crate) fn ddim_step_into(
        &self,
        x_k: &[f64],
        eps_hat: &[f64],
        k: usize,
        k_prev: usize,
        x0: &mut [f64],
        prev: &mut [f64],
    ) {
        let ab = self.alpha_bar[k];
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let abp = self.alpha_bar[k_prev];
        let (spa, spn) = (abp.sqrt(), (1.0 - abp).sqrt());
        for i in 0..x_k.len() {
            let e = eps_hat[i];
            let a0 = ((x_k[i] - sn * e) / sa).clamp(-1.0, 1.0);
            x0[i] = a0;
            prev[i] = spa * a0 + spn * e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        for kind in [ScheduleKind::SquaredCosine, "linear".parse().unwrap()] {
            let s = NoiseSchedule::new(1, kind).unwrap();
            assert_eq!(s.steps(), 1);
            assert!(s.alpha_bar(1) < 1.0);
            assert_eq!(s.alpha_bar(0), 1.0);
        }
    }

    #[test]
    fn cosine_alpha_bar_strictly_decreasing() {
        let s = NoiseSchedule::new(16, ScheduleKind::SquaredCosine).unwrap();
        for w in s.alpha_bar.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.alpha_bar(16) > 0.0);
    }

    #[test]
    fn linear_alpha_bar_matches_direct_product() {
        let s = NoiseSchedule::new(16, "linear".parse().unwrap()).unwrap();
        // direct product oracle over β_k = 1e-4 + (0.02 - 1e-4)(k-1)/15
        let mut prod = 1.0;
        for k in 0..16 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * k as f64 / 15.0);
        }
        assert!((s.alpha_bar(16) - prod).abs() < 1e-15);
        assert!((prod - 0.8505102641705652).abs() < 1e-12, "{prod}");
    }

    #[test]
    fn add_noise_cases() {
        let s = NoiseSchedule {
            kind: ScheduleKind::SquaredCosine,
            betas: vec![0.0, 0.75],
            alpha_bar: vec![1.0, 1.0, 0.25],
        };
        assert_eq!(s.add_noise(&[0.3, -0.2], &[5.0, 5.0], 1).unwrap(), vec![0.3, -0.2]);
        assert_eq!(s.add_noise(&[1.0], &[0.0], 2).unwrap(), vec![0.5]);
        assert!(matches!(s.add_noise(&[1.0], &[0.0], 0), Err(Error::Index { .. })));
        assert!(s.add_noise(&[1.0], &[0.0], 3).is_err());
    }

    #[test]
    fn add_noise_approaches_eps_when_alpha_bar_vanishes() {
        let s = NoiseSchedule {
            kind: ScheduleKind::SquaredCosine,
            betas: vec![1.0 - 1e-14],
            alpha_bar: vec![1.0, 1e-14],
        };
        let x = s.add_noise(&[0.9], &[-1.3], 1).unwrap();
        assert!((x[0] + 1.3).abs() < 1e-6);
    }

    #[test]
    fn inference_steps_descend() {
        let s = NoiseSchedule::new(16, ScheduleKind::SquaredCosine).unwrap();
        assert_eq!(s.inference_steps(8).unwrap(), vec![16, 14, 12, 10, 8, 6, 4, 2]);
        assert_eq!(s.inference_steps(16).unwrap().last(), Some(&1));
        assert!(s.inference_steps(17).is_err());
    }

    #[test]
    fn ddim_step_recovers_a0_with_oracle_noise() {
        let s = NoiseSchedule::new(16, ScheduleKind::SquaredCosine).unwrap();
        let a0 = [0.7, -0.3, 0.05, -0.99];
        let eps = [1.2, -0.4, 2.5, 0.3];
        for k in [16, 9, 1] {
            let xk = s.add_noise(&a0, &eps, k).unwrap();
            let (x0, prev) = s.ddim_step(&xk, &eps, k, k - 1).unwrap();
            for i in 0..4 {
                assert!((x0[i] - a0[i]).abs() < 1e-10);
            }
            // stepping with the same noise lands on the forward-noised point
            let expect = if k > 1 { s.add_noise(&a0, &eps, k - 1).unwrap() } else { a0.to_vec() };
            for i in 0..4 {
                assert!((prev[i] - expect[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ddim_step_clips_and_rejects_bad_order() {
        let s = NoiseSchedule::new(4, ScheduleKind::SquaredCosine).unwrap();
        let (x0, _) = s.ddim_step(&[50.0], &[0.0], 2, 0).unwrap();
        assert_eq!(x0, vec![1.0]);
        assert!(s.ddim_step(&[0.0], &[0.0], 2, 2).is_err());
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("cubic".parse::<ScheduleKind>(), Err(Error::Config { .. })));
    }
}
