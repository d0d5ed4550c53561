//! Quantile transforms, max-quantile combination and split calibration.
//!
//! Each constituent statistic is mapped through an empirical CDF fitted on
//! the first half of an ID calibration set (C₁). The maximum of these
//! quantiles is then itself quantile-transformed through an ECDF fitted on the
//! second, disjoint half (C₂). Flagging a sample when that outer quantile is
//! at least `1 - α` keeps the false-positive rate at `α` up to DKW-type
//! estimation error, whatever the dependence between the statistics.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gof::{GofScorer, Statistic};
use crate::kde::KdeModel;
use crate::Scalar;

/// Smallest calibration set accepted by [`calibrate`].
pub const MIN_CALIBRATION_SIZE: usize = 20;
/// Smallest outer split accepted by [`calibrate`].
pub const MIN_OUTER_SIZE: usize = 10;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.5;

/// Right-continuous empirical CDF, `F̂(x) = #{vᵢ ≤ x} / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EcdfModel<T> {
    sorted: Vec<T>,
}

impl<T: Scalar> EcdfModel<T> {
    pub fn fit(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("cannot fit an ECDF on no values".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ECDF values must be finite (index {i} is {})",
                values[i]
            )));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(Self { sorted })
    }

    /// Rebuilds a model from persisted values, checking the sort invariant.
    pub fn from_sorted(sorted: Vec<T>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(Error::InvalidInput("empty ECDF".into()));
        }
        if sorted.iter().any(|v| !v.is_finite()) || sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput(
                "ECDF values must be finite and non-decreasing".into(),
            ));
        }
        Ok(Self { sorted })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted_values(&self) -> &[T] {
        &self.sorted
    }

    pub fn quantile(&self, x: T) -> T {
        if x.is_nan() {
            return T::nan();
        }
        let count = self.sorted.partition_point(|&v| v <= x);
        T::of_usize(count) / T::of_usize(self.sorted.len())
    }

    /// Generalised inverse: the smallest stored value `v` with `F̂(v) ≥ p`.
    /// `p ≤ 0` returns the minimum; `p > 1` returns the maximum.
    pub fn inverse(&self, p: f64) -> T {
        let n = self.sorted.len();
        let nf = n as f64;
        let mut k = ((p * nf).ceil().max(1.0) as usize - 1).min(n - 1);
        while k > 0 && (k as f64) / nf >= p {
            k -= 1;
        }
        while k < n - 1 && ((k + 1) as f64) / nf < p {
            k += 1;
        }
        self.sorted[k]
    }
}

/// Quantile-transformed statistics of one sample and their maximum `M̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedScore<T> {
    pub quantiles: Vec<(Statistic, T)>,
    pub m_hat: T,
}

/// Maps each statistic through its ECDF and takes the maximum.
pub fn combine_max_quantile<T: Scalar>(
    stats: &[(Statistic, T)],
    inner: &BTreeMap<Statistic, EcdfModel<T>>,
) -> Result<CombinedScore<T>> {
    if stats.is_empty() {
        return Err(Error::Config("no statistics to combine".into()));
    }
    let mut quantiles = Vec::with_capacity(stats.len());
    let mut m_hat = T::zero();
    for &(stat, value) in stats {
        let ecdf = inner
            .get(&stat)
            .ok_or_else(|| Error::Config(format!("no fitted ECDF for statistic '{stat}'")))?;
        let q = ecdf.quantile(value);
        m_hat = m_hat.max(q);
        quantiles.push((stat, q));
    }
    Ok(CombinedScore { quantiles, m_hat })
}

/// CDF of the maximum of `k` independent uniforms, `m̂ᵏ`.
pub fn tippett_quantile<T: Scalar>(m_hat: T, k: usize) -> T {
    m_hat.powi(k as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Id,
    Ood,
}

impl Decision {
    pub fn is_ood(self) -> bool {
        self == Decision::Ood
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub statistics: Vec<Statistic>,
    pub alpha: f64,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> f64 {
    DEFAULT_SPLIT_FRACTION
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            statistics: vec![Statistic::AndersonDarling, Statistic::SpectralCv],
            alpha: 0.05,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            seed: 0,
        }
    }
}

/// A fitted split calibration. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationModel<T> {
    statistics: Vec<Statistic>,
    inner: BTreeMap<Statistic, EcdfModel<T>>,
    outer: EcdfModel<T>,
    alpha: f64,
    gamma: T,
    n1: usize,
    n2: usize,
    split_fraction: f64,
    seed: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

fn threshold_for<T: Scalar>(outer: &EcdfModel<T>, alpha: f64) -> T {
    if 1.0 - alpha <= 0.0 {
        T::zero()
    } else {
        outer.inverse(1.0 - alpha)
    }
}

impl<T: Scalar> CalibrationModel<T> {
    /// Reassembles a model from its parts (used when loading from disk).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        statistics: Vec<Statistic>,
        inner: BTreeMap<Statistic, EcdfModel<T>>,
        outer: EcdfModel<T>,
        alpha: f64,
        n1: usize,
        n2: usize,
        split_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if statistics.is_empty() {
            return Err(Error::Config("calibration needs k >= 1 statistics".into()));
        }
        for s in &statistics {
            if !inner.contains_key(s) {
                return Err(Error::Config(format!("missing inner ECDF for '{s}'")));
            }
        }
        let gamma = threshold_for(&outer, alpha);
        Ok(Self {
            statistics,
            inner,
            outer,
            alpha,
            gamma,
            n1,
            n2,
            split_fraction,
            seed,
        })
    }

    pub fn statistics(&self) -> &[Statistic] {
        &self.statistics
    }

    pub fn k(&self) -> usize {
        self.statistics.len()
    }

    pub fn inner(&self) -> &BTreeMap<Statistic, EcdfModel<T>> {
        &self.inner
    }

    pub fn outer(&self) -> &EcdfModel<T> {
        &self.outer
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `F̂⁻¹_SITN(1 - α)` on the `M̂` scale.
    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn split_sizes(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn split_fraction(&self) -> f64 {
        self.split_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same fit with a different target rate.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let mut m = self.clone();
        m.alpha = alpha;
        m.gamma = threshold_for(&m.outer, alpha);
        Ok(m)
    }

    /// Combines raw statistics given in the order of [`Self::statistics`].
    pub fn combine(&self, raw: &[T]) -> Result<CombinedScore<T>> {
        if raw.len() != self.statistics.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} statistics, got {}",
                self.statistics.len(),
                raw.len()
            )));
        }
        let pairs: Vec<(Statistic, T)> = self.statistics.iter().copied().zip(raw.iter().copied()).collect();
        combine_max_quantile(&pairs, &self.inner)
    }

    /// Outer-ECDF quantile `F̂_SITN(M̂)`.
    pub fn calibrated_quantile(&self, m_hat: T) -> T {
        self.outer.quantile(m_hat)
    }

    pub fn classify(&self, score: &CombinedScore<T>) -> Decision {
        self.classify_at(score.m_hat, self.alpha)
    }

    /// OOD iff `F̂_SITN(m̂) ≥ 1 - α`.
    pub fn classify_at(&self, m_hat: T, alpha: f64) -> Decision {
        if self.calibrated_quantile(m_hat).as_f64() >= 1.0 - alpha {
            Decision::Ood
        } else {
            Decision::Id
        }
    }
}

/// Seeded shuffle of `0..n` cut into the inner (first `n1`) and outer parts.
pub fn split_indices(n: usize, n1: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let c2 = order.split_off(n1.min(n));
    (order, c2)
}

/// Split calibration on precomputed statistics (`n × k`, columns ordered as
/// `cfg.statistics`). Use this to calibrate statistics computed elsewhere.
pub fn calibrate_statistics<T: Scalar>(
    stats: ArrayView2<'_, T>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationModel<T>> {
    check_alpha(cfg.alpha)?;
    let k = cfg.statistics.len();
    if k == 0 {
        return Err(Error::Config("calibration needs k >= 1 statistics".into()));
    }
    if stats.ncols() != k {
        return Err(Error::InvalidInput(format!(
            "statistics matrix has {} columns, config lists {k}",
            stats.ncols()
        )));
    }
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split_fraction must lie in (0, 1), got {}",
            cfg.split_fraction
        )));
    }
    let n = stats.nrows();
    if n < MIN_CALIBRATION_SIZE {
        return Err(Error::InsufficientCalibrationData(format!(
            "|C| = {n} < {MIN_CALIBRATION_SIZE}"
        )));
    }
    let n1 = ((n as f64) * cfg.split_fraction).floor() as usize;
    let n2 = n - n1;
    if n1 == 0 || n2 < MIN_OUTER_SIZE {
        return Err(Error::InsufficientCalibrationData(format!(
            "split gives |C1| = {n1}, |C2| = {n2}; need |C1| >= 1 and |C2| >= {MIN_OUTER_SIZE}"
        )));
    }

    let (c1, c2) = split_indices(n, n1, cfg.seed);
    let (c1, c2) = (&c1[..], &c2[..]);

    let mut inner = BTreeMap::new();
    for (j, &stat) in cfg.statistics.iter().enumerate() {
        let col: Vec<T> = c1.iter().map(|&i| stats[[i, j]]).collect();
        inner.insert(stat, EcdfModel::fit(&col)?);
    }
    let mut outer_values = Vec::with_capacity(n2);
    for &i in c2 {
        let pairs: Vec<(Statistic, T)> = cfg
            .statistics
            .iter()
            .enumerate()
            .map(|(j, &s)| (s, stats[[i, j]]))
            .collect();
        outer_values.push(combine_max_quantile(&pairs, &inner)?.m_hat);
    }
    let outer = EcdfModel::fit(&outer_values)?;
    CalibrationModel::from_parts(
        cfg.statistics.clone(),
        inner,
        outer,
        cfg.alpha,
        n1,
        n2,
        cfg.split_fraction,
        cfg.seed,
    )
}

/// Computes the configured statistics on every latent row, then calibrates.
pub fn calibrate<T: Scalar>(
    latents: ArrayView2<'_, T>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationModel<T>> {
    let scorer = GofScorer::new(&cfg.statistics, latents.ncols())?;
    let stats = scorer.score_rows(latents)?;
    calibrate_statistics(stats.view(), cfg)
}

/// KDE aggregation of the constituent statistics: `-Σ ln p̂ᵢ(Sᵢ)`.
#[derive(Clone, Debug)]
pub struct KdeAggregator<T> {
    kdes: Vec<(Statistic, KdeModel<T>)>,
}

impl<T: Scalar> KdeAggregator<T> {
    /// Fits one KDE per column of `stats` (columns ordered as `statistics`).
    pub fn fit(statistics: &[Statistic], stats: ArrayView2<'_, T>) -> Result<Self> {
        if stats.ncols() != statistics.len() {
            return Err(Error::InvalidInput("statistic/column count mismatch".into()));
        }
        let kdes = statistics
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let col: Vec<T> = stats.column(j).iter().copied().filter(|v| v.is_finite()).collect();
                KdeModel::fit(&col).map(|k| (s, k))
            })
            .collect::<Result<_>>()?;
        Ok(Self { kdes })
    }

    pub fn from_models(kdes: Vec<(Statistic, KdeModel<T>)>) -> Self {
        Self { kdes }
    }

    pub fn score(&self, raw: &[T]) -> Result<T> {
        combine_kde(raw, &self.kdes)
    }
}

/// Negated sum of log-densities; `+∞` when every KDE assigns zero density.
pub fn combine_kde<T: Scalar>(raw: &[T], kdes: &[(Statistic, KdeModel<T>)]) -> Result<T> {
    if raw.len() != kdes.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} statistics, got {}",
            kdes.len(),
            raw.len()
        )));
    }
    let logs: Vec<T> = raw
        .iter()
        .zip(kdes)
        .map(|(&x, (_, k))| k.log_density(x))
        .collect();
    if logs.iter().all(|l| *l == T::neg_infinity()) {
        return Ok(T::infinity());
    }
    Ok(-logs.into_iter().sum::<T>())
}

/// Row-wise combination helper: `(m̂, F̂_SITN(m̂))` for every row of `stats`.
pub fn combine_rows<T: Scalar>(model: &CalibrationModel<T>, stats: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let mut out = Array2::zeros((stats.nrows(), 2));
    for (i, row) in stats.rows().into_iter().enumerate() {
        let raw: Vec<T> = row.iter().copied().collect();
        let c = model.combine(&raw)?;
        out[[i, 0]] = c.m_hat;
        out[[i, 1]] = model.calibrated_quantile(c.m_hat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::standard_normal_cdf;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ecdf_basics() {
        let e = EcdfModel::fit(&[3.0f64, 1.0, 2.0]).unwrap();
        assert_eq!(e.sorted_values(), &[1.0, 2.0, 3.0]);
        assert_eq!(e.n(), 3);
        assert_eq!(EcdfModel::fit(&[5.0f64]).unwrap().n(), 1);
        assert!(EcdfModel::<f64>::fit(&[]).is_err());
        assert!(EcdfModel::fit(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let e = EcdfModel::fit(&[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.quantile(2.5), 0.5);
        assert_eq!(e.quantile(4.0), 1.0);
        assert_eq!(e.quantile(0.5), 0.0);
        assert_eq!(e.quantile(2.0), 0.5);
        assert_eq!(e.quantile(f64::INFINITY), 1.0);
    }

    #[test]
    fn uniform_median_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let q = EcdfModel::fit(&v).unwrap().quantile(0.5);
        assert!((0.48..=0.52).contains(&q), "{q}");
    }

    #[test]
    fn inverse_is_generalised_inverse() {
        let e = EcdfModel::fit(&[1.0f64, 2.0, 2.0, 3.0, 5.0]).unwrap();
        for p in [0.0, 0.1, 0.2, 0.21, 0.4, 0.6, 0.61, 0.8, 0.95, 1.0] {
            let v = e.inverse(p);
            assert!(e.quantile(v) >= p || p <= 0.0);
            // No smaller stored value reaches p.
            for &w in e.sorted_values().iter().filter(|&&w| w < v) {
                assert!(e.quantile(w) < p);
            }
        }
    }

    #[test]
    fn max_quantile_examples() {
        let mut inner = BTreeMap::new();
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        for s in Statistic::ALL {
            inner.insert(s, EcdfModel::fit(&grid).unwrap());
        }
        let c = combine_max_quantile(
            &[(Statistic::AndersonDarling, 0.3), (Statistic::SpectralCv, 0.7)],
            &inner,
        )
        .unwrap();
        assert!((c.m_hat - 0.7).abs() < 1e-15);
        let c = combine_max_quantile(
            &[(Statistic::AndersonDarling, 1.0), (Statistic::SpectralCv, 0.0)],
            &inner,
        )
        .unwrap();
        assert_eq!(c.m_hat, 1.0);
        let c = combine_max_quantile(
            &[
                (Statistic::AndersonDarling, 0.2),
                (Statistic::SpectralCv, 0.5),
                (Statistic::KolmogorovSmirnov, 0.9),
            ],
            &inner,
        )
        .unwrap();
        assert!((c.m_hat - 0.9).abs() < 1e-15);
        assert_eq!(c.quantiles.len(), 3);

        let mut partial = BTreeMap::new();
        partial.insert(Statistic::AndersonDarling, EcdfModel::fit(&grid).unwrap());
        assert!(matches!(
            combine_max_quantile(&[(Statistic::SpectralCv, 0.1)], &partial),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tippett_examples() {
        assert!((tippett_quantile(0.9f64, 2) - 0.81).abs() < 1e-15);
        assert_eq!(tippett_quantile(0.37f64, 1), 0.37);
    }

    fn uniform_stats(n: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, k), |_| rng.random::<f64>())
    }

    fn two_stat_cfg(alpha: f64, seed: u64) -> CalibrationConfig {
        CalibrationConfig {
            statistics: vec![Statistic::AndersonDarling, Statistic::SpectralCv],
            alpha,
            split_fraction: 0.5,
            seed,
        }
    }

    #[test]
    fn calibrate_rejects_bad_inputs() {
        let s = uniform_stats(19, 2, 0);
        assert!(matches!(
            calibrate_statistics(s.view(), &two_stat_cfg(0.05, 0)),
            Err(Error::InsufficientCalibrationData(_))
        ));
        let s = uniform_stats(40, 2, 0);
        let mut cfg = two_stat_cfg(0.05, 0);
        cfg.split_fraction = 0.9;
        assert!(matches!(
            calibrate_statistics(s.view(), &cfg),
            Err(Error::InsufficientCalibrationData(_))
        ));
        assert!(calibrate_statistics(s.view(), &two_stat_cfg(0.0, 0)).is_err());
        assert!(calibrate_statistics(s.view(), &two_stat_cfg(1.5, 0)).is_err());
        let s3 = uniform_stats(40, 3, 0);
        assert!(calibrate_statistics(s3.view(), &two_stat_cfg(0.05, 0)).is_err());
    }

    #[test]
    fn calibrate_is_deterministic_and_splits() {
        let s = uniform_stats(500, 2, 3);
        let a = calibrate_statistics(s.view(), &two_stat_cfg(0.05, 9)).unwrap();
        let b = calibrate_statistics(s.view(), &two_stat_cfg(0.05, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.split_sizes(), (250, 250));
        assert_eq!(a.k(), 2);
        let c = calibrate_statistics(s.view(), &two_stat_cfg(0.05, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn calibration_splits_are_disjoint() {
        // Each row carries a unique value, so the inner and outer sets can be
        // recovered from the fitted model.
        let n = 100;
        let s = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let cfg = CalibrationConfig {
            statistics: vec![Statistic::AndersonDarling],
            alpha: 0.1,
            split_fraction: 0.5,
            seed: 2,
        };
        let m = calibrate_statistics(s.view(), &cfg).unwrap();
        let inner = m.inner()[&Statistic::AndersonDarling].sorted_values().to_vec();
        assert_eq!(inner.len(), 50);
        // Inner quantiles of C2 rows are never hits on C1 values' own ranks:
        // every C1 value appears exactly once.
        let mut seen = inner.clone();
        seen.dedup();
        assert_eq!(seen.len(), 50);
        assert_eq!(m.outer().n(), 50);
    }

    #[test]
    fn alpha_one_flags_everything() {
        let s = uniform_stats(200, 2, 4);
        let m = calibrate_statistics(s.view(), &two_stat_cfg(1.0, 0)).unwrap();
        for i in 0..50 {
            let c = m.combine(&[i as f64 / 100.0, 0.0]).unwrap();
            assert_eq!(m.classify(&c), Decision::Ood);
        }
        let zero = CombinedScore { quantiles: vec![], m_hat: 0.0 };
        assert_eq!(m.classify(&zero), Decision::Ood);
    }

    #[test]
    fn classify_boundaries() {
        let s = uniform_stats(400, 2, 5);
        let m = calibrate_statistics(s.view(), &two_stat_cfg(0.05, 1)).unwrap();
        let above = CombinedScore { quantiles: vec![], m_hat: 1.5 };
        assert_eq!(m.classify(&above), Decision::Ood);
        let zero = CombinedScore { quantiles: vec![], m_hat: 0.0 };
        assert_eq!(m.classify(&zero), Decision::Id);
        // Exactly at gamma is inclusive.
        let at = CombinedScore { quantiles: vec![], m_hat: m.gamma() };
        assert_eq!(m.classify(&at), Decision::Ood);
        // Equivalence with thresholding at gamma.
        for &v in m.outer().sorted_values() {
            let by_gamma = if v >= m.gamma() { Decision::Ood } else { Decision::Id };
            assert_eq!(m.classify_at(v, 0.05), by_gamma);
        }
    }

    #[test]
    fn type_one_rate_on_uniform_statistics() {
        let cal = uniform_stats(4000, 2, 6);
        let m = calibrate_statistics(cal.view(), &two_stat_cfg(0.1, 6)).unwrap();
        let test = uniform_stats(20_000, 2, 7);
        let flagged = combine_rows(&m, test.view())
            .unwrap()
            .column(1)
            .iter()
            .filter(|&&q| q >= 0.9)
            .count() as f64
            / 20_000.0;
        assert!((flagged - 0.1).abs() < 0.02, "{flagged}");
    }

    #[test]
    fn probability_integral_transform_within_dkw() {
        // ECDFs fit on C1, applied to independent C2 draws, give uniform values
        // within the DKW radius in at least 95% of repetitions.
        let (n1, n2, reps) = (500, 500, 500);
        let delta: f64 = 0.05;
        let eps = ((2.0 / delta).ln() / (2.0 * n1 as f64)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ok = 0;
        for _ in 0..reps {
            let c1: Vec<f64> = (0..n1).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e = EcdfModel::fit(&c1).unwrap();
            let mut u: Vec<f64> = (0..n2)
                .map(|_| e.quantile(StandardNormal.sample(&mut rng)))
                .collect();
            u.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // KS distance of the transformed sample to U(0, 1).
            let mut d: f64 = 0.0;
            for (i, &x) in u.iter().enumerate() {
                d = d.max((i + 1) as f64 / n2 as f64 - x).max(x - i as f64 / n2 as f64);
            }
            // The transformed sample is compared against uniform with the
            // C2 sampling error added to the C1 radius.
            let radius = eps + ((2.0 / delta).ln() / (2.0 * n2 as f64)).sqrt();
            if d <= radius {
                ok += 1;
            }
        }
        assert!(ok as f64 / reps as f64 >= 0.95, "{ok}");
    }

    #[test]
    fn dkw_coverage_small() {
        let delta: f64 = 0.05;
        let n = 200;
        let eps = ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut exceed = 0;
        for _ in 0..300 {
            let mut s: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut d: f64 = 0.0;
            for (i, &x) in s.iter().enumerate() {
                let f = standard_normal_cdf(x);
                d = d.max((i + 1) as f64 / n as f64 - f).max(f - i as f64 / n as f64);
            }
            if d > eps {
                exceed += 1;
            }
        }
        assert!(exceed as f64 / 300.0 <= 0.05 * 1.5, "{exceed}");
    }

    #[test]
    fn kde_combination() {
        let centers = vec![0.0f64];
        let b = 0.5;
        let kdes = vec![(Statistic::AndersonDarling, KdeModel::with_bandwidth(centers, b).unwrap())];
        let v = combine_kde(&[0.0], &kdes).unwrap();
        assert!((v - (b * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-14);
        let inf = combine_kde(&[f64::INFINITY], &kdes).unwrap();
        assert!(inf.is_infinite() && inf > 0.0);
        assert!(combine_kde(&[0.0, 1.0], &kdes).is_err());
    }

    #[test]
    fn kde_combination_minimal_at_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let stats = Array2::from_shape_fn((300, 2), |_| StandardNormal.sample(&mut rng));
        let agg = KdeAggregator::fit(&[Statistic::AndersonDarling, Statistic::SpectralCv], stats.view()).unwrap();
        let at_mode = agg.score(&[0.0, 0.0]).unwrap();
        for row in stats.rows() {
            let s = agg.score(&[row[0], row[1]]).unwrap();
            assert!(s >= at_mode - 0.05, "{s} < {at_mode}");
        }
    }

    proptest! {
        #[test]
        fn quantile_is_monotone_and_bounded(
            values in proptest::collection::vec(-100.0f64..100.0, 1..50),
            a in -150.0f64..150.0, b in -150.0f64..150.0,
        ) {
            let e = EcdfModel::fit(&values).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (qa, qb) = (e.quantile(lo), e.quantile(hi));
            prop_assert!((0.0..=1.0).contains(&qa) && (0.0..=1.0).contains(&qb));
            prop_assert!(qa <= qb);
        }

        #[test]
        fn max_quantile_is_monotone(x in 0.0f64..1.0, y in 0.0f64..1.0, bump in 0.0f64..0.5) {
            let mut inner = BTreeMap::new();
            let grid: Vec<f64> = (0..37).map(|i| i as f64 / 36.0).collect();
            inner.insert(Statistic::AndersonDarling, EcdfModel::fit(&grid).unwrap());
            inner.insert(Statistic::SpectralCv, EcdfModel::fit(&grid).unwrap());
            let base = combine_max_quantile(&[(Statistic::AndersonDarling, x), (Statistic::SpectralCv, y)], &inner).unwrap();
            let up = combine_max_quantile(&[(Statistic::AndersonDarling, x + bump), (Statistic::SpectralCv, y)], &inner).unwrap();
            prop_assert!(up.m_hat >= base.m_hat);
            // Any constituent quantile at or above 1 - a' forces m_hat above it.
            for (_, q) in &base.quantiles {
                prop_assert!(base.m_hat >= *q);
            }
        }

        #[test]
        fn calibration_is_bit_deterministic(seed in 0u64..1000) {
            let s = uniform_stats(60, 2, seed);
            let a = calibrate_statistics(s.view(), &two_stat_cfg(0.05, seed)).unwrap();
            let b = calibrate_statistics(s.view(), &two_stat_cfg(0.05, seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
