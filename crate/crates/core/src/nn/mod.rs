//! Minimal differentiable substrate: dense networks, AdamW, Gaussian helpers,
//! seeded random streams and the checkpoint container.

pub mod checkpoint;
pub mod dense;
pub mod gaussian;
pub mod optim;
pub mod rng;

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT_VERSION};
pub use dense::{DenseNet, Linear, NetGrads, Trace};
pub use gaussian::{kl_diag_gaussian_to_standard, reparam_sample, SIGMA_FLOOR};
pub use optim::{AdamW, AdamWConfig, ParamRef};
pub use rng::RngStream;

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)` used by the gradient checks.
/// Two all-zero vectors compare as 0.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
