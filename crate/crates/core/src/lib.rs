//! Geometric and statistical machinery for slice-to-volume registration
//! initialized by a pose predictor.
//!
//! The crate covers the full pipeline around the learned model: slice
//! sampling in a canonical atlas space ([`sampler`]), pose labels with exact
//! anchor-point recovery ([`se3`]), SE(3) statistics for aggregating
//! stochastic predictions and scoring their confidence ([`lie`]), image and
//! pose metrics ([`metrics`]), a predictor contract with a deterministic
//! dictionary baseline ([`predictor`]), and Gaussian-average plus iterative
//! SVR reconstruction ([`recon`]). Volumes and slices travel in the SPV1
//! file format ([`spv`]); [`phantom`] supplies deterministic synthetic
//! volumes so the whole pipeline is verifiable without scanner data.

pub mod lie;
pub mod metrics;
pub mod phantom;
pub mod predictor;
pub mod recon;
pub mod sampler;
pub mod se3;
pub mod spv;
pub mod volume;
