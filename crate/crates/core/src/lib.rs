//! Out-of-distribution detection by goodness-of-fit testing in the noise
//! space of continuous normalising flows.
//!
//! A trained flow maps data `x` back to a latent `z` that should look like a
//! draw from `N(0, I)` when `x` is in-distribution. Each latent is scored by
//! single-sample goodness-of-fit statistics, the statistics are merged by a
//! calibrated maximum-quantile rule, and a sample is flagged when the merged
//! score is extreme relative to held-out in-distribution data.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the element type to `f64`, with `F32`
//! variants where single precision is useful.

pub mod baselines;
pub mod calibration;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gof;
pub mod io;
pub mod kde;
mod scalar;
pub mod special;
pub mod synthetic;

pub use error::{Error, ErrorCategory, Result};
pub use gof::{LatentVector as GenericLatentVector, Statistic};
pub use scalar::Scalar;

pub type LatentVector = gof::LatentVector<f64>;
pub type Periodogram = gof::Periodogram<f64>;
pub type GofScorer = gof::GofScorer<f64>;
pub type EcdfModel = calibration::EcdfModel<f64>;
pub type CalibrationModel = calibration::CalibrationModel<f64>;
pub type CombinedScore = calibration::CombinedScore<f64>;
pub type KdeModel = kde::KdeModel<f64>;

pub type LatentVectorF32 = gof::LatentVector<f32>;
pub type GofScorerF32 = gof::GofScorer<f32>;
pub type CalibrationModelF32 = calibration::CalibrationModel<f32>;
