//! Single-sample goodness-of-fit statistics against the standard normal prior.
//!
//! A latent vector `z` of dimension `D` is treated as `D` draws from
//! `N(0, 1)`. Marginal normality is probed with Anderson-Darling (and
//! Kolmogorov-Smirnov as an auxiliary), dimensional independence with the
//! coefficient of variation of the periodogram.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::standard_normal_cdf;
use crate::Scalar;

/// Lower clamp applied to Φ before taking logs in the Anderson-Darling sum.
pub const LOG_CDF_FLOOR: f64 = 1e-300;

/// A validated single latent `Z = φ⁻¹(X)`: at least two finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> LatentVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "latent vectors need D >= 2, got D = {}",
                values.len()
            )));
        }
        ensure_finite(&values)?;
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }
}

impl<T> Deref for LatentVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.values
    }
}

/// One-sided power spectrum with the DC bin removed.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodogram<T> {
    power: Vec<T>,
    dc_excluded: bool,
}

impl<T: Scalar> Periodogram<T> {
    /// Wraps precomputed bin powers (DC already excluded).
    pub fn from_power(power: Vec<T>) -> Result<Self> {
        if power.is_empty() {
            return Err(Error::InvalidInput("periodogram has no bins".into()));
        }
        if power.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(Error::InvalidInput(
                "periodogram power must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            power,
            dc_excluded: true,
        })
    }

    pub fn power(&self) -> &[T] {
        &self.power
    }

    pub fn bins(&self) -> usize {
        self.power.len()
    }

    pub fn dc_excluded(&self) -> bool {
        self.dc_excluded
    }
}

fn ensure_finite<T: Scalar>(z: &[T]) -> Result<()> {
    match z.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "non-finite entry {} at index {i}",
            z[i]
        ))),
        None => Ok(()),
    }
}

fn sorted<T: Scalar>(z: &[T]) -> Vec<T> {
    let mut s = z.to_vec();
    // Inputs are validated finite, so the comparison is total.
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    s
}

#[inline]
fn clamped_ln_cdf(x: f64) -> f64 {
    standard_normal_cdf(x)
        .clamp(LOG_CDF_FLOOR, 1.0 - LOG_CDF_FLOOR)
        .ln()
}

/// Anderson-Darling statistic of `z` against `N(0, 1)`.
///
/// `S = -D - Σ (2i-1)/D · [ln Φ(z₍ᵢ₎) + ln(1 - Φ(z₍D+1-i₎))]` over the sorted
/// entries. `1 - Φ(x)` is evaluated as `Φ(-x)` and both CDF values are
/// clamped to `[1e-300, 1 - 1e-300]`, so the result stays finite.
pub fn anderson_darling<T: Scalar>(z: &[T]) -> Result<T> {
    if z.is_empty() {
        return Err(Error::InvalidInput("anderson_darling needs D >= 1".into()));
    }
    ensure_finite(z)?;
    let s = sorted(z);
    let d = s.len();
    let dn = T::of_usize(d);
    let mut acc = T::zero();
    for i in 1..=d {
        let lower = clamped_ln_cdf(s[i - 1].as_f64());
        let upper = clamped_ln_cdf(-s[d - i].as_f64());
        acc += T::of_usize(2 * i - 1) / dn * T::of(lower + upper);
    }
    Ok(-dn - acc)
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `z` and Φ.
pub fn kolmogorov_smirnov<T: Scalar>(z: &[T]) -> Result<T> {
    if z.is_empty() {
        return Err(Error::InvalidInput("kolmogorov_smirnov needs D >= 1".into()));
    }
    ensure_finite(z)?;
    let s = sorted(z);
    let dn = T::of_usize(s.len());
    let mut sup = T::zero();
    for (i, &v) in s.iter().enumerate() {
        let f = T::of(standard_normal_cdf(v.as_f64()));
        let above = T::of_usize(i + 1) / dn - f;
        let below = f - T::of_usize(i) / dn;
        sup = sup.max(above).max(below);
    }
    Ok(sup)
}

/// Reusable FFT plan for periodograms of a fixed dimension.
#[derive(Clone)]
pub struct PeriodogramPlan<T: Scalar> {
    fft: Arc<dyn Fft<T>>,
    dim: usize,
}

impl<T: Scalar> fmt::Debug for PeriodogramPlan<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodogramPlan").field("dim", &self.dim).finish()
    }
}

impl<T: Scalar> PeriodogramPlan<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 4 {
            return Err(Error::InvalidInput(format!(
                "periodogram needs D >= 4, got D = {dim}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(dim);
        Ok(Self { fft, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `|FFT(z)[k]|²` for `k = 1..=⌊D/2⌋`.
    pub fn periodogram(&self, z: &[T]) -> Result<Periodogram<T>> {
        if z.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "plan is for D = {}, input has D = {}",
                self.dim,
                z.len()
            )));
        }
        ensure_finite(z)?;
        let bins = self.dim / 2;
        // A constant vector has no power outside DC. Short-circuit so round-off
        // in the transform cannot masquerade as spectral content.
        if z.iter().all(|&v| v == z[0]) {
            return Ok(Periodogram {
                power: vec![T::zero(); bins],
                dc_excluded: true,
            });
        }
        let mut buf: Vec<Complex<T>> = z.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fft.process(&mut buf);
        let power = buf[1..=bins].iter().map(|c| c.norm_sqr()).collect();
        Ok(Periodogram {
            power,
            dc_excluded: true,
        })
    }
}

/// One-sided, DC-excluded periodogram of `z`. Plans a fresh FFT; use
/// [`PeriodogramPlan`] when scoring many vectors of the same dimension.
pub fn periodogram<T: Scalar>(z: &[T]) -> Result<Periodogram<T>> {
    PeriodogramPlan::new(z.len())?.periodogram(z)
}

/// σ/μ over the retained bins, population standard deviation.
pub fn spectral_cv<T: Scalar>(p: &Periodogram<T>) -> Result<T> {
    let m = T::of_usize(p.power.len());
    let mean = p.power.iter().copied().sum::<T>() / m;
    if mean <= T::zero() {
        return Err(Error::DegenerateSpectrum);
    }
    let var = p
        .power
        .iter()
        .map(|&v| {
            let d = v - mean;
            d * d
        })
        .sum::<T>()
        / m;
    Ok(var.sqrt() / mean)
}

/// The statistics this crate knows how to compute on a latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "ad")]
    AndersonDarling,
    #[serde(rename = "cv")]
    SpectralCv,
    #[serde(rename = "ks")]
    KolmogorovSmirnov,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [
        Statistic::AndersonDarling,
        Statistic::SpectralCv,
        Statistic::KolmogorovSmirnov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::AndersonDarling => "ad",
            Statistic::SpectralCv => "cv",
            Statistic::KolmogorovSmirnov => "ks",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ad" | "anderson_darling" => Ok(Statistic::AndersonDarling),
            "cv" | "spectral_cv" => Ok(Statistic::SpectralCv),
            "ks" | "kolmogorov_smirnov" => Ok(Statistic::KolmogorovSmirnov),
            other => Err(Error::Config(format!("unknown statistic '{other}'"))),
        }
    }
}

/// Computes a fixed set of statistics for latents of one dimension.
///
/// A degenerate spectrum (constant latent) is reported as `+∞` for the CV,
/// which every downstream ECDF maps to quantile 1.
#[derive(Clone, Debug)]
pub struct GofScorer<T: Scalar> {
    statistics: Vec<Statistic>,
    plan: Option<PeriodogramPlan<T>>,
}

impl<T: Scalar> GofScorer<T> {
    pub fn new(statistics: &[Statistic], dim: usize) -> Result<Self> {
        if statistics.is_empty() {
            return Err(Error::Config("at least one statistic is required".into()));
        }
        if dim < 2 {
            return Err(Error::InvalidInput(format!("latent dimension {dim} < 2")));
        }
        let plan = if statistics.contains(&Statistic::SpectralCv) {
            Some(PeriodogramPlan::new(dim)?)
        } else {
            None
        };
        Ok(Self {
            statistics: statistics.to_vec(),
            plan,
        })
    }

    pub fn statistics(&self) -> &[Statistic] {
        &self.statistics
    }

    pub fn evaluate(&self, stat: Statistic, z: &[T]) -> Result<T> {
        match stat {
            Statistic::AndersonDarling => anderson_darling(z),
            Statistic::KolmogorovSmirnov => kolmogorov_smirnov(z),
            Statistic::SpectralCv => {
                let plan = match &self.plan {
                    Some(p) => p.clone(),
                    None => PeriodogramPlan::new(z.len())?,
                };
                match spectral_cv(&plan.periodogram(z)?) {
                    Err(Error::DegenerateSpectrum) => Ok(T::infinity()),
                    other => other,
                }
            }
        }
    }

    /// Values in the order of [`Self::statistics`].
    pub fn score(&self, z: &[T]) -> Result<Vec<T>> {
        self.statistics
            .iter()
            .map(|&s| self.evaluate(s, z))
            .collect()
    }

    /// Scores every row of an `n × D` latent matrix into an `n × k` matrix.
    pub fn score_rows(&self, latents: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let k = self.statistics.len();
        let rows: Vec<Vec<T>> = (0..latents.nrows())
            .into_par_iter()
            .map(|i| latents.row(i))
            .map(|row| match row.as_slice() {
                Some(s) => self.score(s),
                None => self.score(&row.to_vec()),
            })
            .collect::<Result<_>>()?;
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((latents.nrows(), k), flat).expect("shape"))
    }
}
