//! Diagonal Gaussian helpers for the latent bottleneck.

use crate::error::{ensure_width, Error, Result};
use crate::nn::rng::RngStream;

/// Lower clamp on σ before taking its log.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// KL divergence from `N(mu, diag(sigma²))` to the standard normal.
pub fn kl_diag_gaussian_to_standard(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    ensure_width("kl sigma", mu.len(), sigma.len())?;
    let mut acc = 0.0;
    for (i, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("sigma[{i}] = {s} must be positive")));
        }
        let s = s.max(SIGMA_FLOOR);
        acc += m * m + s * s - 1.0 - (s * s).ln();
    }
    Ok(0.5 * acc)
}

/// Draws `z = mu + alpha * sigma ⊙ eps` with `eps` from `rng`.
pub fn reparam_sample(mu: &[f64], sigma: &[f64], alpha: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    ensure_width("reparam sigma", mu.len(), sigma.len())?;
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be non-negative")));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let eps = rng.normal();
            m + alpha * s * eps
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prior_has_zero_kl() {
        for d in [1, 4, 16] {
            assert_eq!(kl_diag_gaussian_to_standard(&vec![0.0; d], &vec![1.0; d]).unwrap(), 0.0);
        }
    }

    #[test]
    fn closed_form_values() {
        assert!((kl_diag_gaussian_to_standard(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let v = kl_diag_gaussian_to_standard(&[0.0], &[2.0]).unwrap();
        assert!((v - 0.8068528194400547).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_sigma_is_domain_error() {
        assert!(matches!(
            kl_diag_gaussian_to_standard(&[0.0], &[0.0]),
            Err(Error::Domain(_))
        ));
        assert!(kl_diag_gaussian_to_standard(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn alpha_zero_or_sigma_zero_returns_mean() {
        let mut rng = RngStream::new(1, "t");
        let mu = [0.3, -1.2, 4.0];
        assert_eq!(reparam_sample(&mu, &[1.0, 2.0, 3.0], 0.0, &mut rng).unwrap(), mu);
        assert_eq!(reparam_sample(&mu, &[0.0; 3], 2.0, &mut rng).unwrap(), mu);
    }

    #[test]
    fn scaled_draws_follow_stream() {
        let mut rng = RngStream::new(42, "explore");
        let z = reparam_sample(&[0.0; 4], &[1.0; 4], 2.0, &mut rng).unwrap();
        let mut replay = RngStream::new(42, "explore");
        let want: Vec<f64> = (0..4).map(|_| 2.0 * replay.normal()).collect();
        assert_eq!(z, want);
    }

    #[test]
    fn negative_alpha_rejected() {
        let mut rng = RngStream::new(1, "t");
        assert!(reparam_sample(&[0.0], &[1.0], -0.5, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            mu in proptest::collection::vec(-5.0f64..5.0, 1..8),
            log_sigma in proptest::collection::vec(-4.0f64..3.0, 8),
        ) {
            let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|l| l.exp()).collect();
            let kl = kl_diag_gaussian_to_standard(&mu, &sigma).unwrap();
            prop_assert!(kl >= 0.0);
        }
    }
}
