//! Latent-space and trajectory analytics.

pub mod fps;
pub mod metrics;
pub mod proposals;
pub mod snr;

pub use fps::farthest_point_sampling;
pub use metrics::{average_jerk, pass_at_k, relative_improvement};
pub use proposals::{candidates_along_dimension, fps_start, offsets, propose_along_dimension, Proposal, ProposalSet};
pub use snr::{compute_snr, compute_snr_arrays, effective_dimensions, to_db, SnrDim, SnrReport, SnrSpectrum, SNR_DB_FLOOR};
