//! In-distribution data, variance-scaled OOD data and structured
//! perturbations.
//!
//! In-distribution vectors of dimension `D` are `D / 2` i.i.d. draws from a
//! 2-D Gaussian mixture laid end to end. OOD vectors are produced in latent
//! space and pushed through the forward flow, so their latents follow a known
//! law: `N(0, a²I)` for the variance-scaled family or a perturbed standard
//! normal otherwise.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate_batch, DataSampler, Direction, SolverConfig, VectorField};
use crate::Scalar;

/// Equal-weight mixture of isotropic Gaussians in `ℝ²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub means: Vec<[f64; 2]>,
    pub std_dev: f64,
}

impl Default for GaussianMixture {
    fn default() -> Self {
        Self {
            means: vec![[-1.0, 0.0], [1.0, 0.0]],
            std_dev: 0.5,
        }
    }
}

impl GaussianMixture {
    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if !(self.std_dev > 0.0 && self.std_dev.is_finite()) {
            return Err(Error::Config(format!("mixture std_dev must be positive, got {}", self.std_dev)));
        }
        Ok(())
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let c = &self.means[rng.random_range(0..self.means.len())];
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        [c[0] + self.std_dev * a, c[1] + self.std_dev * b]
    }

    pub fn mean(&self) -> [f64; 2] {
        let k = self.means.len() as f64;
        let sx: f64 = self.means.iter().map(|m| m[0]).sum();
        let sy: f64 = self.means.iter().map(|m| m[1]).sum();
        [sx / k, sy / k]
    }

    /// Row-major 2×2 covariance.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let mu = self.mean();
        let k = self.means.len() as f64;
        let s2 = self.std_dev * self.std_dev;
        let mut c = [[s2, 0.0], [0.0, s2]];
        for m in &self.means {
            let d = [m[0] - mu[0], m[1] - mu[1]];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += d[i] * d[j] / k;
                }
            }
        }
        c
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let s2 = self.std_dev * self.std_dev;
        let norm = -(2.0 * std::f64::consts::PI * s2).ln();
        let logs: Vec<f64> = self
            .means
            .iter()
            .map(|m| norm - ((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)) / (2.0 * s2))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln() - (self.means.len() as f64).ln()
    }

    /// `n × dim` matrix of `dim / 2` independent pairs per row.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> Array2<T> {
        let mut out = Array2::zeros((n, dim));
        for mut row in out.outer_iter_mut() {
            for p in 0..dim / 2 {
                let [a, b] = self.sample_pair(rng);
                row[2 * p] = T::of(a);
                row[2 * p + 1] = T::of(b);
            }
        }
        out
    }
}

/// Training sampler for the 2-D mixture.
#[derive(Clone, Debug, Default)]
pub struct MixtureSampler {
    pub mixture: GaussianMixture,
}

impl<T: Scalar> DataSampler<T> for MixtureSampler {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
        self.mixture.sample(n, 2, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    MeanShift,
    VarianceScale,
    MovingAverage,
    ToneInjection,
    ConstantPatch,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::MeanShift,
        PerturbationKind::VarianceScale,
        PerturbationKind::MovingAverage,
        PerturbationKind::ToneInjection,
        PerturbationKind::ConstantPatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::MeanShift => "mean_shift",
            PerturbationKind::VarianceScale => "variance_scale",
            PerturbationKind::MovingAverage => "moving_average",
            PerturbationKind::ToneInjection => "tone_injection",
            PerturbationKind::ConstantPatch => "constant_patch",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown perturbation '{s}'")))
    }
}

/// Applies a perturbation to every row. Strength `0` is the identity.
///
/// * `mean_shift`: `x + s`
/// * `variance_scale`: `x (1 + s)`
/// * `moving_average`: circular moving sum over `w = round(s)` neighbours
///   divided by `√w`, which keeps unit marginal variance for white input
/// * `tone_injection`: `x + s √2 cos(2π k₀ i / D)` with `k₀ = max(1, D/8)`
/// * `constant_patch`: the first `⌊s D⌋` entries replaced by their mean
pub fn perturb<T: Scalar>(data: ArrayView2<'_, T>, kind: PerturbationKind, strength: f64) -> Result<Array2<T>> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::InvalidInput(format!("perturbation strength must be >= 0, got {strength}")));
    }
    let d = data.ncols();
    let mut out = data.to_owned();
    if strength == 0.0 {
        return Ok(out);
    }
    let s = T::of(strength);
    match kind {
        PerturbationKind::MeanShift => out.mapv_inplace(|v| v + s),
        PerturbationKind::VarianceScale => out.mapv_inplace(|v| v * (T::one() + s)),
        PerturbationKind::MovingAverage => {
            let w = strength.round() as usize;
            if w > 1 {
                let norm = T::of(1.0 / (w as f64).sqrt());
                for (src, mut dst) in data.outer_iter().zip(out.outer_iter_mut()) {
                    for i in 0..d {
                        let acc: T = (0..w).map(|j| src[(i + j) % d]).sum();
                        dst[i] = acc * norm;
                    }
                }
            }
        }
        PerturbationKind::ToneInjection => {
            let k0 = (d / 8).max(1) as f64;
            let tone: Vec<T> = (0..d)
                .map(|i| {
                    let phase = 2.0 * std::f64::consts::PI * k0 * i as f64 / d as f64;
                    s * T::of(std::f64::consts::SQRT_2 * phase.cos())
                })
                .collect();
            for mut row in out.outer_iter_mut() {
                for (v, &t) in row.iter_mut().zip(&tone) {
                    *v += t;
                }
            }
        }
        PerturbationKind::ConstantPatch => {
            if strength > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "constant_patch strength is a fraction in [0, 1], got {strength}"
                )));
            }
            let m = (strength * d as f64).floor() as usize;
            if m > 0 {
                for mut row in out.outer_iter_mut() {
                    let mean = row.iter().take(m).copied().sum::<T>() / T::of_usize(m);
                    row.iter_mut().take(m).for_each(|v| *v = mean);
                }
            }
        }
    }
    Ok(out)
}

/// How OOD latents are generated before the forward flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSpec {
    /// Latents `N(0, a²I)`.
    VarianceScaled { scale: f64 },
    /// Standard-normal latents passed through [`perturb`].
    Perturbed { kind: PerturbationKind, strength: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub mixture: GaussianMixture,
    pub ood: OodSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Names accepted by [`Scenario::builtin`].
pub const BUILTIN_SCENARIOS: [&str; 7] = [
    "identical",
    "variance_scaled",
    "mean_shift",
    "variance_scale",
    "moving_average",
    "tone_injection",
    "constant_patch",
];

impl Scenario {
    pub fn builtin(name: &str, dim: usize, seed: u64) -> Result<Self> {
        let ood = match name {
            "identical" => OodSpec::VarianceScaled { scale: 1.0 },
            "variance_scaled" => OodSpec::VarianceScaled { scale: 2.0 },
            "mean_shift" => OodSpec::Perturbed {
                kind: PerturbationKind::MeanShift,
                strength: 0.6,
            },
            "variance_scale" => OodSpec::Perturbed {
                kind: PerturbationKind::VarianceScale,
                strength: 0.75,
            },
            "moving_average" => OodSpec::Perturbed {
                kind: PerturbationKind::MovingAverage,
                strength: 3.0,
            },
            "tone_injection" => OodSpec::Perturbed {
                kind: PerturbationKind::ToneInjection,
                strength: 1.0,
            },
            "constant_patch" => OodSpec::Perturbed {
                kind: PerturbationKind::ConstantPatch,
                strength: 0.5,
            },
            other => return Err(Error::Config(format!("unknown scenario '{other}'"))),
        };
        let s = Self {
            name: name.to_string(),
            dim,
            mixture: GaussianMixture::default(),
            ood,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "scenario dimension must be even and >= 2, got {}",
                self.dim
            )));
        }
        self.mixture.validate()?;
        match &self.ood {
            OodSpec::VarianceScaled { scale } if !(*scale > 0.0 && scale.is_finite()) => {
                Err(Error::Config(format!("variance scale must be positive, got {scale}")))
            }
            OodSpec::Perturbed { strength, .. } if !(*strength >= 0.0 && strength.is_finite()) => {
                Err(Error::Config(format!("perturbation strength must be >= 0, got {strength}")))
            }
            _ => Ok(()),
        }
    }

    /// Number of 2-D blocks per vector.
    pub fn blocks(&self) -> usize {
        self.dim / 2
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// `n` in-distribution vectors.
    pub fn sample_id<T: Scalar>(&self, n: usize) -> Result<Array2<T>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("sample size must be >= 1".into()));
        }
        Ok(self.mixture.sample(n, self.dim, &mut self.rng(0)))
    }

    /// `n` OOD latents, before any flow is applied.
    pub fn sample_ood_latents<T: Scalar>(&self, n: usize) -> Result<Array2<T>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("sample size must be >= 1".into()));
        }
        let mut rng = self.rng(1);
        let z: Array2<T> = Array2::from_shape_simple_fn((n, self.dim), || T::of(StandardNormal.sample(&mut rng)));
        match self.ood {
            OodSpec::VarianceScaled { scale } => Ok(z * T::of(scale)),
            OodSpec::Perturbed { kind, strength } => perturb(z.view(), kind, strength),
        }
    }

    /// `n` OOD vectors in data space: OOD latents pushed through the forward
    /// flow of `field`.
    pub fn sample_ood<T: Scalar, F: VectorField<T> + ?Sized>(&self, field: &F, n: usize, solver: &SolverConfig) -> Result<Array2<T>> {
        let z = self.sample_ood_latents(n)?;
        integrate_batch(field, z.view(), Direction::Forward, solver)
    }
}

/// Data whose inverse-flow latents are `N(0, a²I)`: standard-normal draws
/// scaled by `a` and pushed through the forward flow.
pub fn sample_variance_scaled_ood<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    scale: f64,
    n: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<Array2<T>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("variance scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = T::of(scale);
    let z = Array2::from_shape_simple_fn((n, field.dim()), || a * T::of(StandardNormal.sample(&mut rng)));
    integrate_batch(field, z.view(), Direction::Forward, solver)
}
