use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{tippett_quantile, CalibrationModel};
use crate::error::{Error, Result};
use crate::Scalar;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;
pub const MIN_BOOTSTRAP_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Id,
    Ood,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Id => "id",
            Label::Ood => "ood",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" | "0" => Ok(Label::Id),
            "ood" | "1" => Ok(Label::Ood),
            other => Err(Error::InvalidInput(format!("unknown label '{other}'"))),
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    Ok(())
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counting one half. Computed from midranks in `O(n log n)`.
pub fn auroc_split(id: &[f64], ood: &[f64]) -> Result<f64> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::InvalidInput(format!(
            "AUROC needs both classes (got {} ID, {} OOD)",
            id.len(),
            ood.len()
        )));
    }
    check_scores(id)?;
    check_scores(ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (n0, n1) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n0 * n1))
}

pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    let (id, ood) = split_by_label(scores, labels);
    auroc_split(&id, &ood)
}

fn split_by_label(scores: &[f64], labels: &[Label]) -> (Vec<f64>, Vec<f64>) {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        match l {
            Label::Id => id.push(s),
            Label::Ood => ood.push(s),
        }
    }
    (id, ood)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub iterations: usize,
    pub seed: u64,
}

/// Linear-interpolation percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Generator for bootstrap iteration `i`: a fixed seed with the iteration as
/// stream, so results do not depend on scheduling.
fn iteration_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Stratified percentile bootstrap of the AUROC: ID and OOD scores are
/// resampled separately with replacement, keeping both class counts.
pub fn bootstrap_auroc(id: &[f64], ood: &[f64], iterations: usize, seed: u64) -> Result<BootstrapResult> {
    if iterations < MIN_BOOTSTRAP_ITERATIONS {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs >= {MIN_BOOTSTRAP_ITERATIONS} iterations, got {iterations}"
        )));
    }
    let point = auroc_split(id, ood)?;
    let mut stats: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = iteration_rng(seed, i);
            let (a, b) = stratified_resample(id, ood, &mut rng);
            auroc_split(&a, &b).expect("strata are non-empty")
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        point,
        ci_low: percentile(&stats, 0.025),
        ci_high: percentile(&stats, 0.975),
        iterations,
        seed,
    })
}

pub(crate) fn stratified_resample<R: Rng + ?Sized>(id: &[f64], ood: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let a = (0..id.len()).map(|_| id[rng.random_range(0..id.len())]).collect();
    let b = (0..ood.len()).map(|_| ood[rng.random_range(0..ood.len())]).collect();
    (a, b)
}

/// Empirical false-positive rates of three thresholding rules at one nominal
/// rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FprPoint {
    pub alpha: f64,
    /// `M̂ ≥ 1 - α` with no outer calibration.
    pub raw: f64,
    /// `F̂_SITN(M̂) ≥ 1 - α`.
    pub calibrated: f64,
    /// `M̂ᵏ ≥ 1 - α`.
    pub tippett: f64,
}

/// Nominal rates `0.01, 0.02, …, 0.50`.
pub fn alpha_grid() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 100.0).collect()
}

/// Flag rates on ID statistics (`n × k`, ordered as the model's statistics)
/// at a single nominal rate.
pub fn fpr_at<T: Scalar>(model: &CalibrationModel<T>, id_stats: ArrayView2<'_, T>, alpha: f64) -> Result<FprPoint> {
    Ok(fpr_curve_at(model, id_stats, &[alpha])?[0])
}

/// Flag rates on ID statistics over [`alpha_grid`].
pub fn fpr_curve<T: Scalar>(model: &CalibrationModel<T>, id_stats: ArrayView2<'_, T>) -> Result<Vec<FprPoint>> {
    fpr_curve_at(model, id_stats, &alpha_grid())
}

pub fn fpr_curve_at<T: Scalar>(model: &CalibrationModel<T>, id_stats: ArrayView2<'_, T>, alphas: &[f64]) -> Result<Vec<FprPoint>> {
    let n = id_stats.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("no ID samples for the FPR curve".into()));
    }
    let k = model.k();
    let mut m_hat = Vec::with_capacity(n);
    for row in id_stats.outer_iter() {
        let raw: Vec<T> = row.iter().copied().collect();
        m_hat.push(model.combine(&raw)?.m_hat);
    }
    let q: Vec<f64> = m_hat.iter().map(|&m| model.calibrated_quantile(m).as_f64()).collect();
    let tip: Vec<f64> = m_hat.iter().map(|&m| tippett_quantile(m, k).as_f64()).collect();
    let raw: Vec<f64> = m_hat.iter().map(|m| m.as_f64()).collect();
    let frac = |v: &[f64], alpha: f64| v.iter().filter(|&&x| x >= 1.0 - alpha).count() as f64 / n as f64;
    Ok(alphas
        .iter()
        .map(|&alpha| FprPoint {
            alpha,
            raw: frac(&raw, alpha),
            calibrated: frac(&q, alpha),
            tippett: frac(&tip, alpha),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_statistics, CalibrationConfig};
    use crate::gof::Statistic;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct pair enumeration.
    fn auroc_pairs(id: &[f64], ood: &[f64]) -> f64 {
        let mut s = 0.0;
        for &a in ood {
            for &b in id {
                s += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (id.len() * ood.len()) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc_split(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc_split(&[0.5; 4], &[0.5; 3]).unwrap(), 0.5);
        assert_eq!(auroc_split(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.75);
        assert!(auroc_split(&[1.0], &[]).is_err());
        assert!(auroc_split(&[f64::NAN], &[1.0]).is_err());
        let labels = [Label::Id, Label::Ood, Label::Id, Label::Ood];
        assert_eq!(auroc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 0.75);
        assert!(auroc(&[1.0, 2.0], &[Label::Id, Label::Id]).is_err());
        // The maximal-OOD sentinel ranks above everything.
        assert_eq!(auroc_split(&[1e300], &[f64::INFINITY]).unwrap(), 1.0);
    }

    #[test]
    fn auroc_matches_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let n0 = rng.random_range(1..15);
            let n1 = rng.random_range(1..15);
            // Coarse grid to force ties.
            let id: Vec<f64> = (0..n0).map(|_| rng.random_range(0..8) as f64 / 2.0).collect();
            let ood: Vec<f64> = (0..n1).map(|_| rng.random_range(0..8) as f64 / 2.0 + 0.5).collect();
            assert!((auroc_split(&id, &ood).unwrap() - auroc_pairs(&id, &ood)).abs() < 1e-9);
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.025) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn separated_scores_have_degenerate_ci() {
        let id: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ood: Vec<f64> = (0..20).map(|i| 100.0 + i as f64).collect();
        let r = bootstrap_auroc(&id, &ood, 500, 1).unwrap();
        assert_eq!((r.point, r.ci_low, r.ci_high), (1.0, 1.0, 1.0));
        assert!(bootstrap_auroc(&id, &ood, 99, 1).is_err());
        assert!(bootstrap_auroc(&id, &[], 500, 1).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let id: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let ood: Vec<f64> = (0..100).map(|_| rng.random::<f64>() + 0.3).collect();
        let a = bootstrap_auroc(&id, &ood, 1000, 9).unwrap();
        let b = bootstrap_auroc(&id, &ood, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.ci_high);
        // Serial evaluation with the same per-iteration streams agrees.
        let mut serial: Vec<f64> = (0..1000)
            .map(|i| {
                let (x, y) = stratified_resample(&id, &ood, &mut iteration_rng(9, i));
                auroc_split(&x, &y).unwrap()
            })
            .collect();
        serial.sort_by(f64::total_cmp);
        assert_eq!(percentile(&serial, 0.025), a.ci_low);
        assert_eq!(percentile(&serial, 0.975), a.ci_high);
    }

    #[test]
    fn stratified_resample_keeps_counts() {
        let id = vec![0.0; 17];
        let ood = vec![1.0; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = stratified_resample(&id, &ood, &mut rng);
            assert_eq!((a.len(), b.len()), (17, 5));
            assert!(a.iter().all(|&v| v == 0.0) && b.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn ci_width_scales_with_inverse_root_n() {
        let width = |n: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let id: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ood: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.2).collect();
            let r = bootstrap_auroc(&id, &ood, 400, seed).unwrap();
            r.ci_high - r.ci_low
        };
        let small: f64 = (0..50).map(|s| width(100, s)).sum::<f64>() / 50.0;
        let large: f64 = (0..50).map(|s| width(200, s)).sum::<f64>() / 50.0;
        let ratio = large / small;
        let target = 1.0 / 2f64.sqrt();
        assert!((ratio / target - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn fpr_curve_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cal = Array2::from_shape_simple_fn((4000, 2), || rng.random::<f64>());
        let cfg = CalibrationConfig {
            statistics: vec![Statistic::AndersonDarling, Statistic::SpectralCv],
            alpha: 0.05,
            split_fraction: 0.5,
            seed: 1,
        };
        let model = calibrate_statistics(cal.view(), &cfg).unwrap();
        let test = Array2::from_shape_simple_fn((20_000, 2), || rng.random::<f64>());
        let curve = fpr_curve(&model, test.view()).unwrap();
        assert_eq!(curve.len(), 50);
        for p in &curve {
            assert!((p.calibrated - p.alpha).abs() < 0.02, "{p:?}");
            // Independent constituents: raw rate is 1 - (1 - α)², above α.
            let raw = 1.0 - (1.0 - p.alpha).powi(2);
            assert!((p.raw - raw).abs() < 0.02, "{p:?}");
            assert!(p.raw > p.alpha);
            assert!((p.tippett - p.alpha).abs() < 0.02, "{p:?}");
        }
        let one = fpr_at(&model, test.view(), 1.0).unwrap();
        assert_eq!((one.raw, one.calibrated, one.tippett), (1.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_increasing_maps(
            id in proptest::collection::vec(-5.0f64..5.0, 1..30),
            ood in proptest::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let a = auroc_split(&id, &ood).unwrap();
            let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 + 1.0).collect::<Vec<_>>();
            prop_assert_eq!(a, auroc_split(&f(&id), &f(&ood)).unwrap());
            prop_assert!((a - auroc_pairs(&id, &ood)).abs() < 1e-12);
        }
    }
}
