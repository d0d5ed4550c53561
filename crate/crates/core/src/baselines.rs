//! Likelihood-based comparison scorers. Every score grows with OOD-ness.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
pub use crate::flow::StatVector;
use crate::kde::KdeModel;
use crate::special::nats_to_bits;
use crate::Scalar;

/// Calibration points used per DoSE KDE.
pub const DOSE_SUBSAMPLE_CAP: usize = 10_000;

pub fn score_loglik<T: Scalar>(s: &StatVector<T>) -> T {
    -s.log_likelihood
}

/// Resubstitution entropy estimate: the mean negative log-likelihood.
pub fn entropy_estimate<T: Scalar>(stats: &[StatVector<T>]) -> Result<T> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("entropy estimate needs at least one sample".into()));
    }
    let nll: T = stats.iter().map(|s| -s.log_likelihood).sum();
    let h = nll / T::of_usize(stats.len());
    if !h.is_finite() {
        return Err(Error::InvalidInput("non-finite log-likelihood in entropy estimate".into()));
    }
    Ok(h)
}

/// `|NLL - H|`.
pub fn score_typicality<T: Scalar>(s: &StatVector<T>, entropy: T) -> T {
    (-s.log_likelihood - entropy).abs()
}

/// One KDE each over log-likelihood, latent log-probability and divergence
/// integral.
#[derive(Clone, Debug)]
pub struct DoseModel<T> {
    kdes: [KdeModel<T>; 3],
}

fn components<T: Scalar>(s: &StatVector<T>) -> [T; 3] {
    [s.log_likelihood, s.latent_log_prob, s.divergence_integral]
}

impl<T: Scalar> DoseModel<T> {
    /// Fits on at most [`DOSE_SUBSAMPLE_CAP`] seeded-subsampled points.
    pub fn fit(stats: &[StatVector<T>], seed: u64) -> Result<Self> {
        Self::fit_capped(stats, DOSE_SUBSAMPLE_CAP, seed)
    }

    pub fn fit_capped(stats: &[StatVector<T>], cap: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fit_one = |j: usize, rng: &mut ChaCha8Rng| {
            let values: Vec<T> = stats.iter().map(|s| components(s)[j]).collect();
            KdeModel::fit_subsampled(&values, cap, rng).map_err(|e| match e {
                Error::DegenerateKde(msg) => Error::Config(format!("DoSE statistic {j}: {msg}")),
                other => other,
            })
        };
        Ok(Self {
            kdes: [fit_one(0, &mut rng)?, fit_one(1, &mut rng)?, fit_one(2, &mut rng)?],
        })
    }

    pub fn kdes(&self) -> &[KdeModel<T>; 3] {
        &self.kdes
    }

    /// `-Σ log p̂ⱼ(sⱼ)`.
    pub fn score(&self, s: &StatVector<T>) -> T {
        -components(s)
            .iter()
            .zip(&self.kdes)
            .map(|(&v, k)| k.log_density(v))
            .sum::<T>()
    }
}

/// Deflate size of `bytes` in bits per byte.
pub fn compressed_bits_per_dim(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes).expect("in-memory write");
    let out = enc.finish().expect("in-memory write");
    (out.len() * 8) as f64 / bytes.len() as f64
}

/// 8-bit quantiser over a fixed value range, followed by deflate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexityModel {
    lo: f64,
    hi: f64,
}

impl ComplexityModel {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidInput(format!("quantisation range [{lo}, {hi}] is empty")));
        }
        Ok(Self { lo, hi })
    }

    /// Global min-max range over calibration data.
    pub fn fit<T: Scalar>(data: ArrayView2<'_, T>) -> Result<Self> {
        let (lo, hi) = data
            .iter()
            .map(|v| v.as_f64())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self::new(lo, hi)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn quantise<T: Scalar>(&self, x: &[T]) -> Vec<u8> {
        let span = self.hi - self.lo;
        x.iter()
            .map(|v| (((v.as_f64() - self.lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn bits_per_dim<T: Scalar>(&self, x: &[T]) -> f64 {
        compressed_bits_per_dim(&self.quantise(x))
    }
}

/// `-L_bpd - c` with `L_bpd = log_likelihood / (D ln 2)`.
pub fn score_complexity<T: Scalar>(s: &StatVector<T>, complexity_bpd: f64, dim: usize) -> T {
    let bpd = nats_to_bits(s.log_likelihood.as_f64()) / dim as f64;
    T::of(-bpd - complexity_bpd)
}

/// `-(mean - variance)` of ensemble log-likelihoods, population variance.
pub fn score_waic<T: Scalar>(ensemble: &[T]) -> Result<T> {
    if ensemble.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "WAIC needs an ensemble of at least 2 models, got {}",
            ensemble.len()
        )));
    }
    if ensemble.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite ensemble log-likelihood".into()));
    }
    let n = T::of_usize(ensemble.len());
    let mean = ensemble.iter().copied().sum::<T>() / n;
    let var = ensemble.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    Ok(-(mean - var))
}
