//! Long-term (two-timescale) joint power control and beamforming design for
//! weighted sum-rate maximization in cellular and cell-free massive MIMO uplinks.
//!
//! The crate is organized bottom-up:
//!
//! - [`scenario`]: network geometry, large-scale gains, user-centric clusters and
//!   the per-AP CSI visibility that defines each beamforming architecture.
//! - [`channel`]: seeded batches of Rayleigh fading realizations, used as the
//!   sample-average approximation of every expectation.
//! - [`beamforming`]: MMSE-type beamformer families with structural zeros,
//!   large-scale fading decoding weights, and long-term policy parameters.
//! - [`metrics`]: use-and-then-forget moments, MSE, SINR, rates and the
//!   W-MMSE objective.
//! - [`optimizer`]: the long-term block coordinate ascent and its baselines.
//! - [`experiment`]: drop sweeps, results files and empirical CDF tables.

pub mod beamforming;
pub mod channel;
pub mod error;
pub mod experiment;
mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod rng;
pub mod scenario;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
