use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{bootstrap_auroc, fpr_curve, BootstrapResult, FprPoint, Label, DEFAULT_BOOTSTRAP_ITERATIONS};
use super::records::{bootstrap_ci, record_from_stats, Method, ScoreRecord};
use crate::baselines::{
    entropy_estimate, score_complexity, score_loglik, score_typicality, score_waic, ComplexityModel, DoseModel, StatVector,
};
use crate::calibration::{calibrate_statistics, split_indices, CalibrationConfig, CalibrationModel, KdeAggregator};
use crate::error::{Error, Result};
use crate::flow::{
    integrate_batch, log_likelihood_batch, train_with, BlockwiseField, Direction, FlowArchitecture, FlowModel,
    SolverConfig, TrainConfig,
};
use crate::gof::{GofScorer, Statistic};
use crate::synthetic::{MixtureSampler, Scenario};

fn default_ensemble() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Architecture of the 2-D flow tiled across the scenario dimension.
    pub flow: FlowArchitecture,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    pub n_calibration: usize,
    pub n_test_id: usize,
    pub n_test_ood: usize,
    pub bootstrap_iterations: usize,
    /// Flows in the WAIC ensemble, including the main one.
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    /// Seed for the bootstrap and for data draws.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            flow: FlowArchitecture::new(2),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            calibration: CalibrationConfig::default(),
            n_calibration: 2000,
            n_test_id: 1000,
            n_test_ood: 1000,
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            ensemble_size: default_ensemble(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.flow.dim != 2 {
            return Err(Error::Config(format!(
                "the experiment flow is 2-D and tiled over blocks; got flow dim {}",
                self.flow.dim
            )));
        }
        self.flow.validate()?;
        self.train.validate()?;
        self.solver.validate()?;
        if self.n_test_id == 0 || self.n_test_ood == 0 {
            return Err(Error::Config("test sets must be non-empty".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodAuroc {
    pub method: Method,
    #[serde(flatten)]
    pub auroc: BootstrapResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub statistics: Vec<Statistic>,
    pub alpha: f64,
    pub gamma: f64,
    pub n_inner: usize,
    pub n_outer: usize,
    /// Flag rate on held-out ID at `alpha`.
    pub test_fpr: f64,
    /// Miss rate on OOD at `alpha`.
    pub test_fnr: f64,
}

/// Measured miss rate against `(1-α)/γ · P̂(F̂_AD(S_AD) ≤ γ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeIiCheck {
    pub alpha: f64,
    pub gamma: f64,
    pub fraction_ad_below_gamma: f64,
    pub predicted_fnr: f64,
    pub measured_fnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    pub n_calibration: usize,
    pub n_test_id: usize,
    pub n_test_ood: usize,
    pub held_out_loss: Option<f64>,
    pub calibration: CalibrationSummary,
    pub auroc: Vec<MethodAuroc>,
    /// Single-statistic arms, the max-quantile combination and the KDE
    /// aggregation.
    pub ablation: Vec<MethodAuroc>,
    pub fpr_curve: Vec<FprPoint>,
    pub type_ii: Option<TypeIiCheck>,
}

impl Report {
    pub fn auroc_of(&self, method: Method) -> Option<&BootstrapResult> {
        self.auroc
            .iter()
            .chain(&self.ablation)
            .find(|m| m.method == method)
            .map(|m| &m.auroc)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report serialisation: {e}")))
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {} (D = {}), calibration {} / test {} ID + {} OOD",
            self.scenario.name, self.scenario.dim, self.n_calibration, self.n_test_id, self.n_test_ood
        );
        let c = &self.calibration;
        let _ = writeln!(
            out,
            "alpha {:.3}  gamma {:.4}  test FPR {:.4}  test FNR {:.4}",
            c.alpha, c.gamma, c.test_fpr, c.test_fnr
        );
        let table = |out: &mut String, title: &str, rows: &[MethodAuroc]| {
            let _ = writeln!(out, "\n{title}");
            let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8}", "method", "auroc", "ci_low", "ci_high");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<12} {:>8.4} {:>8.4} {:>8.4}",
                    r.method.name(),
                    r.auroc.point,
                    r.auroc.ci_low,
                    r.auroc.ci_high
                );
            }
        };
        table(&mut out, "AUROC", &self.auroc);
        table(&mut out, "ablation", &self.ablation);
        if let Some(t) = &self.type_ii {
            let _ = writeln!(
                out,
                "\ntype II: measured FNR {:.4}, predicted {:.4}",
                t.measured_fnr, t.predicted_fnr
            );
        }
        out
    }

    /// Nominal against empirical FPR, one row per grid point.
    pub fn fpr_csv(&self) -> String {
        let mut out = String::from("alpha,raw,calibrated,tippett\n");
        for p in &self.fpr_curve {
            let _ = writeln!(out, "{},{},{},{}", p.alpha, p.raw, p.calibrated, p.tippett);
        }
        out
    }

    /// AUROC rows with CIs.
    pub fn auroc_csv(&self) -> String {
        let mut out = String::from("scenario,method,auroc,ci_low,ci_high\n");
        for r in self.auroc.iter().chain(&self.ablation) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.scenario.name, r.method, r.auroc.point, r.auroc.ci_low, r.auroc.ci_high
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: Report,
    pub records: Vec<ScoreRecord>,
    pub model: FlowModel<f64>,
    pub calibration: CalibrationModel<f64>,
}

/// Receives intermediate artefacts as soon as they exist, so a later failure
/// does not lose them.
pub trait ExperimentSink {
    fn model(&mut self, _model: &FlowModel<f64>) -> Result<()> {
        Ok(())
    }

    fn records(&mut self, _records: &[ScoreRecord]) -> Result<()> {
        Ok(())
    }
}

impl ExperimentSink for () {}

/// Independent seeds for the parts of a run.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Trains the 2-D mixture flow.
pub fn train_mixture_flow(arch: &FlowArchitecture, cfg: &TrainConfig) -> Result<(FlowModel<f64>, f64)> {
    let model = FlowModel::new(arch.clone(), cfg.seed)?;
    let mut sampler = MixtureSampler::default();
    let model = train_with(model, &mut sampler, cfg, |_, _| {})?;
    let loss = crate::flow::held_out_loss(&model, &mut sampler, 8192, derive_seed(cfg.seed, 7))?;
    Ok((model, loss))
}

struct Sets {
    cal: Array2<f64>,
    test: Array2<f64>,
    labels: Vec<Label>,
}

fn draw_sets(scenario: &Scenario, field: &BlockwiseField<FlowModel<f64>>, cfg: &ExperimentConfig) -> Result<Sets> {
    let cal = scenario
        .with_seed(derive_seed(scenario.seed, 1))
        .sample_id::<f64>(cfg.n_calibration.max(1))?;
    let test_scenario = scenario.with_seed(derive_seed(scenario.seed, 2));
    let id = test_scenario.sample_id::<f64>(cfg.n_test_id)?;
    let ood = test_scenario.sample_ood(field, cfg.n_test_ood, &cfg.solver)?;
    let test = ndarray::concatenate(Axis(0), &[id.view(), ood.view()])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let labels = std::iter::repeat_n(Label::Id, cfg.n_test_id)
        .chain(std::iter::repeat_n(Label::Ood, cfg.n_test_ood))
        .collect();
    Ok(Sets { cal, test, labels })
}

type Inverted = (Array2<f64>, Option<Vec<StatVector<f64>>>);

/// Latents, plus likelihood statistics when requested.
fn invert(
    field: &BlockwiseField<FlowModel<f64>>,
    x: ArrayView2<'_, f64>,
    solver: &SolverConfig,
    likelihood: bool,
) -> Result<Inverted> {
    if likelihood {
        let b = log_likelihood_batch(field, x, solver)?;
        Ok((b.latents, Some(b.stats)))
    } else {
        Ok((integrate_batch(field, x, Direction::Inverse, solver)?, None))
    }
}

fn ensemble_loglik(
    members: &[FlowModel<f64>],
    blocks: usize,
    x: ArrayView2<'_, f64>,
    solver: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    members
        .iter()
        .map(|m| {
            let f = BlockwiseField::new::<f64>(m.clone(), blocks)?;
            Ok(log_likelihood_batch(&f, x, solver)?
                .stats
                .iter()
                .map(|s| s.log_likelihood)
                .collect())
        })
        .collect()
}

pub fn run_experiment(
    scenario: &Scenario,
    methods: &[Method],
    cfg: &ExperimentConfig,
    model: Option<FlowModel<f64>>,
) -> Result<ExperimentOutput> {
    run_experiment_with(scenario, methods, cfg, model, &mut ())
}

/// Trains (or reuses) a flow, calibrates on fresh ID data, scores a labelled
/// test set with every requested method and summarises the results.
pub fn run_experiment_with<S: ExperimentSink + ?Sized>(
    scenario: &Scenario,
    methods: &[Method],
    cfg: &ExperimentConfig,
    model: Option<FlowModel<f64>>,
    sink: &mut S,
) -> Result<ExperimentOutput> {
    scenario.validate()?;
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let statistics = cfg.calibration.statistics.clone();
    for m in &methods {
        if let Some(s) = m.statistic() {
            if !statistics.contains(&s) {
                return Err(Error::Config(format!(
                    "method '{m}' needs statistic '{s}' in the calibration set"
                )));
            }
        }
    }

    let (model, held_out) = match model {
        Some(m) => {
            if m.architecture().dim != 2 {
                return Err(Error::Config("the experiment needs a 2-D flow".into()));
            }
            (m, None)
        }
        None => {
            let (m, loss) = train_mixture_flow(&cfg.flow, &cfg.train)?;
            (m, Some(loss))
        }
    };
    sink.model(&model)?;

    let blocks = scenario.blocks();
    let field = BlockwiseField::new::<f64>(model.clone(), blocks)?;
    let sets = draw_sets(scenario, &field, cfg)?;
    let likelihood = methods.iter().any(|m| m.needs_likelihood());
    let (cal_latents, cal_ll) = invert(&field, sets.cal.view(), &cfg.solver, likelihood)?;
    let (test_latents, test_ll) = invert(&field, sets.test.view(), &cfg.solver, likelihood)?;

    let scorer = GofScorer::<f64>::new(&statistics, scenario.dim)?;
    let cal_stats = scorer.score_rows(cal_latents.view())?;
    let test_stats = scorer.score_rows(test_latents.view())?;
    let calibration = calibrate_statistics(cal_stats.view(), &cfg.calibration)?;
    // The KDE arm sees the same inner split as the ECDFs, so the ablation
    // changes only the aggregation rule.
    let (n1, _) = calibration.split_sizes();
    let (inner_idx, _) = split_indices(cal_stats.nrows(), n1, cfg.calibration.seed);
    let kde = KdeAggregator::fit(&statistics, cal_stats.select(Axis(0), &inner_idx).view())?;

    let mut baseline: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    if let (Some(cal_ll), Some(test_ll)) = (&cal_ll, &test_ll) {
        for &m in &methods {
            let scores: Vec<f64> = match m {
                Method::Loglik => test_ll.iter().map(score_loglik).collect(),
                Method::Typicality => {
                    let h = entropy_estimate(cal_ll)?;
                    test_ll.iter().map(|s| score_typicality(s, h)).collect()
                }
                Method::Dose => {
                    let dose = DoseModel::fit(cal_ll, derive_seed(cfg.seed, 3))?;
                    test_ll.iter().map(|s| dose.score(s)).collect()
                }
                Method::Complexity => {
                    let c = ComplexityModel::fit(sets.cal.view())?;
                    test_ll
                        .iter()
                        .zip(sets.test.outer_iter())
                        .map(|(s, row)| {
                            let x: Vec<f64> = row.to_vec();
                            score_complexity(s, c.bits_per_dim(&x), scenario.dim)
                        })
                        .collect()
                }
                Method::Waic => {
                    let mut members = vec![model.clone()];
                    for e in 1..cfg.ensemble_size {
                        let train = TrainConfig {
                            seed: derive_seed(cfg.train.seed, 100 + e as u64),
                            ..cfg.train.clone()
                        };
                        members.push(train_mixture_flow(&cfg.flow, &train)?.0);
                    }
                    let mut lls = vec![test_ll.iter().map(|s| s.log_likelihood).collect::<Vec<_>>()];
                    lls.extend(ensemble_loglik(&members[1..], blocks, sets.test.view(), &cfg.solver)?);
                    (0..sets.labels.len())
                        .map(|i| score_waic(&lls.iter().map(|l| l[i]).collect::<Vec<_>>()))
                        .collect::<Result<_>>()?
                }
                _ => continue,
            };
            baseline.insert(m, scores);
        }
    }

    let kde_scores: Vec<f64> = test_stats
        .outer_iter()
        .map(|row| kde.score(&row.to_vec()))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(sets.labels.len());
    for (i, row) in test_stats.outer_iter().enumerate() {
        let mut r = record_from_stats(i, &statistics, &row.to_vec(), Some(&calibration))?;
        for &m in methods.iter().filter(|m| !m.is_constituent()) {
            let v = if m == Method::SitnKde { kde_scores[i] } else { baseline[&m][i] };
            r.scores.insert(m, v);
        }
        r.label = Some(sets.labels[i]);
        records.push(r);
    }
    sink.records(&records)?;

    let iterations = cfg.bootstrap_iterations;
    let boot_seed = derive_seed(cfg.seed, 4);
    let auroc = methods
        .iter()
        .map(|&m| {
            Ok(MethodAuroc {
                method: m,
                auroc: bootstrap_ci(&records, m, iterations, boot_seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Ablation arms are always computed, whatever the method list.
    let mut arms: Vec<Method> = statistics.iter().map(|&s| Method::from_statistic(s)).collect();
    arms.push(Method::Sitn);
    arms.push(Method::SitnKde);
    let ablation = arms
        .iter()
        .map(|&m| {
            let scores: Vec<f64> = if m == Method::SitnKde {
                kde_scores.clone()
            } else {
                records.iter().map(|r| r.scores[&m]).collect()
            };
            let (id, ood) = split_by(&scores, &sets.labels);
            Ok(MethodAuroc {
                method: m,
                auroc: bootstrap_auroc(&id, &ood, iterations, boot_seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_id = cfg.n_test_id;
    let id_stats = test_stats.slice(ndarray::s![..n_id, ..]);
    let curve = fpr_curve(&calibration, id_stats)?;

    let alpha = calibration.alpha();
    let flagged: Vec<bool> = records
        .iter()
        .map(|r| calibration.classify_at(r.scores[&Method::Sitn], alpha).is_ood())
        .collect();
    let test_fpr = flagged[..n_id].iter().filter(|&&f| f).count() as f64 / n_id as f64;
    let test_fnr = flagged[n_id..].iter().filter(|&&f| !f).count() as f64 / cfg.n_test_ood as f64;
    let gamma = calibration.gamma();

    let type_ii = statistics.contains(&Statistic::AndersonDarling).then(|| {
        let below = records[n_id..]
            .iter()
            .filter(|r| quantile_of(r, Statistic::AndersonDarling) <= gamma)
            .count() as f64
            / cfg.n_test_ood as f64;
        let predicted = if gamma > 0.0 { (1.0 - alpha) / gamma * below } else { 0.0 };
        TypeIiCheck {
            alpha,
            gamma,
            fraction_ad_below_gamma: below,
            predicted_fnr: predicted,
            measured_fnr: test_fnr,
        }
    });

    let (n1, n2) = calibration.split_sizes();
    let report = Report {
        scenario: scenario.clone(),
        config: cfg.clone(),
        n_calibration: sets.cal.nrows(),
        n_test_id: cfg.n_test_id,
        n_test_ood: cfg.n_test_ood,
        held_out_loss: held_out,
        calibration: CalibrationSummary {
            statistics,
            alpha,
            gamma,
            n_inner: n1,
            n_outer: n2,
            test_fpr,
            test_fnr,
        },
        auroc,
        ablation,
        fpr_curve: curve,
        type_ii,
    };
    Ok(ExperimentOutput {
        report,
        records,
        model,
        calibration,
    })
}

fn quantile_of(r: &ScoreRecord, s: Statistic) -> f64 {
    r.quantiles
        .as_ref()
        .and_then(|q| q.iter().find(|p| p.0 == s))
        .map(|p| p.1)
        .unwrap_or(f64::NAN)
}

fn split_by(scores: &[f64], labels: &[Label]) -> (Vec<f64>, Vec<f64>) {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == Label::Id {
            id.push(s);
        } else {
            ood.push(s);
        }
    }
    (id, ood)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct() {
        let s: Vec<u64> = (0..5).map(|k| derive_seed(3, k)).collect();
        for i in 0..5 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(3, 1), derive_seed(3, 1));
    }

    #[test]
    fn config_rejects_non_planar_flow() {
        let cfg = ExperimentConfig {
            flow: FlowArchitecture::new(4),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
