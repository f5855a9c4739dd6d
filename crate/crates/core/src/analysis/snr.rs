use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_width, Error, Result};
use crate::vib::LatentGaussian;

/// dB value reported for a zero ratio.
pub const SNR_DB_FLOOR: f64 = -300.0;

/// Per-dimension `Var(μ_i) / E[σ_i²]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSpectrum {
    pub snr: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub samples: usize,
}

pub fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(SNR_DB_FLOOR)
    } else {
        SNR_DB_FLOOR
    }
}

impl SnrSpectrum {
    pub fn from_ratios(snr: Vec<f64>, samples: usize) -> Self {
        let snr_db = snr.iter().map(|&r| to_db(r)).collect();
        Self { snr, snr_db, samples }
    }

    pub fn dim(&self) -> usize {
        self.snr.len()
    }

    /// Dimension indices sorted by dB, highest first (stable on ties).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.dim()).collect();
        idx.sort_by(|&a, &b| self.snr_db[b].total_cmp(&self.snr_db[a]));
        idx
    }

    pub fn report(&self, threshold_db: f64) -> SnrReport {
        SnrReport {
            dims: (0..self.dim())
                .map(|i| SnrDim {
                    index: i,
                    snr: self.snr[i],
                    snr_db: self.snr_db[i],
                    effective: self.snr_db[i] > threshold_db,
                })
                .collect(),
            threshold_db,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrDim {
    pub index: usize,
    pub snr: f64,
    pub snr_db: f64,
    pub effective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub dims: Vec<SnrDim>,
    pub threshold_db: f64,
    pub samples: usize,
}

impl SnrReport {
    pub fn effective(&self) -> Vec<usize> {
        self.dims.iter().filter(|d| d.effective).map(|d| d.index).collect()
    }
}

/// SNR over rows of `μ` and `σ` (one row per sample).
pub fn compute_snr_arrays(mu: ArrayView2<'_, f64>, sigma: ArrayView2<'_, f64>) -> Result<SnrSpectrum> {
    let n = mu.nrows();
    if n < 2 {
        return Err(Error::Input(format!("SNR needs at least 2 samples, got {n}")));
    }
    ensure_width("sigma rows", n, sigma.nrows())?;
    ensure_width("sigma width", mu.ncols(), sigma.ncols())?;
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("sigma must be strictly positive".into()));
    }
    let d = mu.ncols();
    // Welford for the mean/variance of μ, running mean for σ².
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    for (r, (mrow, srow)) in mu.rows().into_iter().zip(sigma.rows()).enumerate() {
        let count = (r + 1) as f64;
        for i in 0..d {
            let x = mrow[i];
            let delta = x - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (x - mean[i]);
            s2[i] += (srow[i] * srow[i] - s2[i]) / count;
        }
    }
    let ratios = (0..d).map(|i| (m2[i] / n as f64) / s2[i]).collect();
    Ok(SnrSpectrum::from_ratios(ratios, n))
}

pub fn compute_snr(samples: &[LatentGaussian]) -> Result<SnrSpectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Input(format!("SNR needs at least 2 samples, got {n}")));
    }
    let d = samples[0].dim();
    let mut mu = ndarray::Array2::zeros((n, d));
    let mut sigma = ndarray::Array2::zeros((n, d));
    for (r, s) in samples.iter().enumerate() {
        ensure_width("latent mu", d, s.mu.len())?;
        ensure_width("latent sigma", d, s.sigma.len())?;
        mu.row_mut(r).assign(&ndarray::ArrayView1::from(&s.mu[..]));
        sigma.row_mut(r).assign(&ndarray::ArrayView1::from(&s.sigma[..]));
    }
    compute_snr_arrays(mu.view(), sigma.view())
}

/// Indices whose dB value exceeds `threshold_db`.
pub fn effective_dimensions(spec: &SnrSpectrum, threshold_db: f64) -> Vec<usize> {
    (0..spec.dim()).filter(|&i| spec.snr_db[i] > threshold_db).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngStream;
    use proptest::prelude::*;

    fn lg(mu: Vec<f64>, sigma: Vec<f64>) -> LatentGaussian {
        LatentGaussian { mu, sigma }
    }

    #[test]
    fn alternating_mean_gives_four() {
        let s: Vec<_> = (0..10).map(|i| lg(vec![if i % 2 == 0 { -2.0 } else { 2.0 }], vec![1.0])).collect();
        let spec = compute_snr(&s).unwrap();
        assert!((spec.snr[0] - 4.0).abs() < 1e-12);
        assert!((spec.snr_db[0] - 6.020599913279624).abs() < 1e-9);
    }

    #[test]
    fn constant_mean_is_zero_and_floored() {
        let s: Vec<_> = (0..5).map(|_| lg(vec![0.7], vec![0.3])).collect();
        let spec = compute_snr(&s).unwrap();
        assert_eq!(spec.snr[0], 0.0);
        assert_eq!(spec.snr_db[0], SNR_DB_FLOOR);
    }

    #[test]
    fn too_few_samples_and_bad_sigma() {
        assert!(matches!(compute_snr(&[lg(vec![0.0], vec![1.0])]), Err(Error::Input(_))));
        assert!(compute_snr(&[lg(vec![0.0], vec![0.0]), lg(vec![1.0], vec![1.0])]).is_err());
    }

    #[test]
    fn effective_threshold() {
        let spec = SnrSpectrum {
            snr: vec![0.0; 3],
            snr_db: vec![3.1, -20.0, 0.5],
            samples: 2,
        };
        assert_eq!(effective_dimensions(&spec, 0.0), vec![0, 2]);
        assert!(effective_dimensions(&spec, 10.0).is_empty());
        assert_eq!(spec.ranked(), vec![0, 2, 1]);
        assert_eq!(spec.report(0.0).effective(), vec![0, 2]);
    }

    pub(crate) fn two_pass(samples: &[LatentGaussian]) -> Vec<f64> {
        let n = samples.len() as f64;
        let d = samples[0].mu.len();
        (0..d)
            .map(|i| {
                let mean = samples.iter().map(|s| s.mu[i]).sum::<f64>() / n;
                let var = samples.iter().map(|s| (s.mu[i] - mean).powi(2)).sum::<f64>() / n;
                let es2 = samples.iter().map(|s| s.sigma[i] * s.sigma[i]).sum::<f64>() / n;
                var / es2
            })
            .collect()
    }

    #[test]
    fn matches_two_pass_on_random_samples() {
        let mut r = RngStream::new(4, "snr");
        let s: Vec<_> = (0..1000)
            .map(|_| {
                lg(
                    (0..6).map(|i| r.normal() * i as f64 + 3.0).collect(),
                    (0..6).map(|_| r.uniform_range(0.1, 2.0)).collect(),
                )
            })
            .collect();
        let spec = compute_snr(&s).unwrap();
        for (a, b) in spec.snr.iter().zip(two_pass(&s)) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn scaling_and_permutation(
            mus in prop::collection::vec(-5.0f64..5.0, 4..40),
            c in 0.1f64..10.0,
            rot in 0usize..40,
        ) {
            let s: Vec<_> = mus.iter().enumerate().map(|(i, &m)| lg(vec![m], vec![0.5 + (i % 3) as f64 * 0.25])).collect();
            let base = compute_snr(&s).unwrap().snr[0];
            let scaled: Vec<_> = s.iter().map(|x| lg(vec![c * x.mu[0]], x.sigma.clone())).collect();
            let sc = compute_snr(&scaled).unwrap().snr[0];
            prop_assert!((sc - c * c * base).abs() <= 1e-9 * (c * c * base).max(1e-12));
            let mut perm = s.clone();
            perm.rotate_left(rot % s.len());
            let p = compute_snr(&perm).unwrap().snr[0];
            prop_assert!((p - base).abs() <= 1e-10 * base.max(1e-12));
        }
    }
}
