//! Motion-conditioned diffusion over skeletal pose sequences for
//! frame-level video anomaly detection.
//!
//! A denoiser learns to reconstruct corrupted future pose frames
//! conditioned on clean past frames; at inference the model generates
//! multiple plausible futures per window, and the statistical aggregate
//! of their reconstruction errors against the observed future becomes
//! the anomaly score, evaluated frame-by-frame with ROC-AUC.
//!
//! The numeric core is generic over the scalar type ([`Real`], f32 or
//! f64); concrete aliases for the default f64 pipeline sit at the crate
//! root.

pub mod conditioning;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod motion_data;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar of the shipped pipeline.
pub type F = f64;

pub type VarianceSchedule64 = diffusion::VarianceSchedule<F>;
pub type DisplacementMap64 = diffusion::DisplacementMap<F>;
pub type PoseTrack64 = motion_data::PoseTrack<F>;
pub type MotionWindow64 = motion_data::MotionWindow<F>;
pub type PoseDataset64 = motion_data::PoseDataset<F>;
pub type Model64 = conditioning::Model<F>;
