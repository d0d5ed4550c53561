use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::metrics::{bootstrap_auroc, BootstrapResult, Label};
use crate::calibration::CalibrationModel;
use crate::error::{Error, Result};
use crate::gof::{GofScorer, Statistic};
use crate::Scalar;

/// A scoring method. Every method's score grows with OOD-ness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Max-quantile combination `M̂`.
    Sitn,
    /// Inner quantile of a single statistic.
    Ad,
    Cv,
    Ks,
    /// KDE aggregation of the raw statistics.
    SitnKde,
    Loglik,
    Typicality,
    Dose,
    Complexity,
    Waic,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Sitn,
        Method::Ad,
        Method::Cv,
        Method::Ks,
        Method::SitnKde,
        Method::Loglik,
        Method::Typicality,
        Method::Dose,
        Method::Complexity,
        Method::Waic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sitn => "sitn",
            Method::Ad => "ad",
            Method::Cv => "cv",
            Method::Ks => "ks",
            Method::SitnKde => "sitn_kde",
            Method::Loglik => "loglik",
            Method::Typicality => "typicality",
            Method::Dose => "dose",
            Method::Complexity => "complexity",
            Method::Waic => "waic",
        }
    }

    /// The statistic behind a single-statistic method.
    pub fn statistic(self) -> Option<Statistic> {
        match self {
            Method::Ad => Some(Statistic::AndersonDarling),
            Method::Cv => Some(Statistic::SpectralCv),
            Method::Ks => Some(Statistic::KolmogorovSmirnov),
            _ => None,
        }
    }

    pub fn from_statistic(s: Statistic) -> Self {
        match s {
            Statistic::AndersonDarling => Method::Ad,
            Statistic::SpectralCv => Method::Cv,
            Statistic::KolmogorovSmirnov => Method::Ks,
        }
    }

    /// Whether the method needs per-sample log-likelihoods.
    pub fn needs_likelihood(self) -> bool {
        matches!(
            self,
            Method::Loglik | Method::Typicality | Method::Dose | Method::Complexity | Method::Waic
        )
    }

    /// `Sitn` and the single-statistic methods, which every calibrated
    /// record carries.
    pub fn is_constituent(self) -> bool {
        matches!(self, Method::Sitn | Method::Ad | Method::Cv | Method::Ks)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Per-sample outputs of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: usize,
    /// Raw statistics, in calibration order.
    pub stats: Vec<(Statistic, f64)>,
    /// Inner-ECDF quantiles; absent without a calibration.
    pub quantiles: Option<Vec<(Statistic, f64)>>,
    pub scores: BTreeMap<Method, f64>,
    pub label: Option<Label>,
}

impl ScoreRecord {
    pub fn score(&self, method: Method) -> Option<f64> {
        self.scores.get(&method).copied()
    }
}

/// Splits `method` scores of labelled records into (ID, OOD).
pub fn split_scores(records: &[ScoreRecord], method: Method) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for r in records {
        let s = r
            .score(method)
            .ok_or_else(|| Error::InvalidInput(format!("record {} has no '{method}' score", r.id)))?;
        match r.label {
            Some(Label::Id) => id.push(s),
            Some(Label::Ood) => ood.push(s),
            None => return Err(Error::InvalidInput(format!("record {} is unlabelled", r.id))),
        }
    }
    Ok((id, ood))
}

/// Stratified bootstrap CI of one method's AUROC over labelled records.
pub fn bootstrap_ci(records: &[ScoreRecord], method: Method, iterations: usize, seed: u64) -> Result<BootstrapResult> {
    let (id, ood) = split_scores(records, method)?;
    bootstrap_auroc(&id, &ood, iterations, seed)
}


/// Scores latents with the goodness-of-fit statistics and, given a
/// calibration, their quantiles and `M̂`. Rows come back unlabelled with ids
/// `0..n`.
pub fn score_latents<T: Scalar>(
    latents: ArrayView2<'_, T>,
    statistics: &[Statistic],
    calibration: Option<&CalibrationModel<T>>,
) -> Result<Vec<ScoreRecord>> {
    if let Some(c) = calibration {
        if c.statistics() != statistics {
            return Err(Error::Config(format!(
                "calibration covers {:?}, scoring requested {:?}",
                c.statistics(),
                statistics
            )));
        }
    }
    let scorer = GofScorer::new(statistics, latents.ncols())?;
    let stats = scorer.score_rows(latents)?;
    stats
        .outer_iter()
        .enumerate()
        .map(|(id, row)| {
            let raw: Vec<T> = row.to_vec();
            record_from_stats(id, statistics, &raw, calibration)
        })
        .collect()
}

/// Canonical record for one row of statistics: `Sitn` and the single-statistic
/// methods are filled in whenever a calibration is present.
pub(crate) fn record_from_stats<T: Scalar>(
    id: usize,
    statistics: &[Statistic],
    raw: &[T],
    calibration: Option<&CalibrationModel<T>>,
) -> Result<ScoreRecord> {
    let mut scores = BTreeMap::new();
    let quantiles = match calibration {
        Some(c) => {
            let combined = c.combine(raw)?;
            scores.insert(Method::Sitn, combined.m_hat.as_f64());
            let q: Vec<(Statistic, f64)> = combined.quantiles.iter().map(|&(s, v)| (s, v.as_f64())).collect();
            for &(s, v) in &q {
                scores.insert(Method::from_statistic(s), v);
            }
            Some(q)
        }
        None => None,
    };
    Ok(ScoreRecord {
        id,
        stats: statistics.iter().copied().zip(raw.iter().map(|v| v.as_f64())).collect(),
        quantiles,
        scores,
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate, CalibrationConfig};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("bogus".parse::<Method>().is_err());
        assert_eq!(Method::from_statistic(Statistic::SpectralCv).statistic(), Some(Statistic::SpectralCv));
    }

    fn record(id: usize, score: f64, label: Label) -> ScoreRecord {
        ScoreRecord {
            id,
            stats: vec![],
            quantiles: None,
            scores: BTreeMap::from([(Method::Loglik, score)]),
            label: Some(label),
        }
    }

    #[test]
    fn bootstrap_ci_over_records() {
        let records: Vec<ScoreRecord> = (0..40)
            .map(|i| record(i, i as f64, if i < 30 { Label::Id } else { Label::Ood }))
            .collect();
        let r = bootstrap_ci(&records, Method::Loglik, 200, 0).unwrap();
        assert_eq!(r.point, 1.0);
        assert!(bootstrap_ci(&records, Method::Dose, 200, 0).is_err());
        let mut unlabelled = records.clone();
        unlabelled[0].label = None;
        assert!(bootstrap_ci(&unlabelled, Method::Loglik, 200, 0).is_err());
    }

    #[test]
    fn score_latents_fills_canonical_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Array2<f64> = Array2::from_shape_simple_fn((200, 16), || StandardNormal.sample(&mut rng));
        let cfg = CalibrationConfig::default();
        let model = calibrate(z.view(), &cfg).unwrap();
        let plain = score_latents(z.view(), &cfg.statistics, None).unwrap();
        assert!(plain.iter().all(|r| r.quantiles.is_none() && r.scores.is_empty()));
        let full = score_latents(z.view(), &cfg.statistics, Some(&model)).unwrap();
        for (p, f) in plain.iter().zip(&full) {
            assert_eq!(p.stats, f.stats);
            let q = f.quantiles.as_ref().unwrap();
            let m = q.iter().fold(0.0f64, |a, v| a.max(v.1));
            assert_eq!(f.scores[&Method::Sitn], m);
            assert_eq!(f.scores[&Method::Ad], q[0].1);
            assert_eq!(f.scores[&Method::Cv], q[1].1);
        }
        assert!(score_latents(z.view(), &[Statistic::AndersonDarling], Some(&model)).is_err());
    }
}
