use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_text;
use crate::calibration::CalibrationConfig;
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, Method, DEFAULT_BOOTSTRAP_ITERATIONS};
use crate::flow::{FlowArchitecture, SolverConfig, TrainConfig};
use crate::synthetic::{GaussianMixture, OodSpec, Scenario};

/// A named built-in scenario, optionally with its OOD generator or mixture
/// replaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ood: Option<OodSpec>,
    #[serde(default)]
    pub mixture: Option<GaussianMixture>,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario> {
        let mut s = match Scenario::builtin(&self.name, self.dim, self.seed) {
            Ok(s) => s,
            // Custom names are fine when the generator is given explicitly.
            Err(_) if self.ood.is_some() => Scenario {
                name: self.name.clone(),
                dim: self.dim,
                mixture: GaussianMixture::default(),
                ood: OodSpec::VarianceScaled { scale: 1.0 },
                seed: self.seed,
            },
            Err(e) => return Err(e),
        };
        if let Some(o) = &self.ood {
            s.ood = o.clone();
        }
        if let Some(m) = &self.mixture {
            s.mixture = m.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSizes {
    pub calibration: usize,
    pub test_id: usize,
    pub test_ood: usize,
    pub bootstrap_iterations: usize,
    pub ensemble_size: usize,
}

impl Default for SampleSizes {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            calibration: e.n_calibration,
            test_id: e.n_test_id,
            test_ood: e.n_test_ood,
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            ensemble_size: e.ensemble_size,
        }
    }
}

/// Where `evaluate` writes its artefacts. Relative paths resolve against
/// `dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub report: PathBuf,
    pub summary: PathBuf,
    pub scores: PathBuf,
    pub fpr_curve: PathBuf,
    pub auroc: PathBuf,
    pub model: PathBuf,
    pub calibration: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            report: "report.json".into(),
            summary: "summary.txt".into(),
            scores: "scores.csv".into(),
            fpr_curve: "fpr_curve.csv".into(),
            auroc: "auroc.csv".into(),
            model: "flow.bin".into(),
            calibration: "calibration.json".into(),
        }
    }
}

impl OutputSpec {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Sitn, Method::Ad, Method::Cv, Method::SitnKde]
}

/// Everything `evaluate` needs. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every other seed when present.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub scenario: ScenarioSpec,
    #[serde(default = "default_flow")]
    pub flow: FlowArchitecture,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub samples: SampleSizes,
    #[serde(default)]
    pub outputs: OutputSpec,
}

fn default_flow() -> FlowArchitecture {
    FlowArchitecture::new(2)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Sets every seed to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let s = self.scenario.build()?;
        Ok(match self.seed {
            Some(seed) => s.with_seed(seed),
            None => s,
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig {
            flow: self.flow.clone(),
            train: self.train.clone(),
            solver: self.solver.clone(),
            calibration: self.calibration.clone(),
            n_calibration: self.samples.calibration,
            n_test_id: self.samples.test_id,
            n_test_ood: self.samples.test_ood,
            bootstrap_iterations: self.samples.bootstrap_iterations,
            ensemble_size: self.samples.ensemble_size,
            seed: 0,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
            cfg.calibration.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
