use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::calibration::{CalibrationModel, EcdfModel};
use crate::error::{Error, Result};
use crate::gof::Statistic;
use crate::Scalar;

const FORMAT: &str = "sitn-calibration";
const VERSION: u32 = 1;

/// On-disk form of a [`CalibrationModel`]: plain JSON with the sorted ECDF
/// support points embedded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub format: String,
    pub version: u32,
    pub statistics: Vec<Statistic>,
    pub alpha: f64,
    /// Informational; recomputed from `outer` and `alpha` on load.
    pub gamma: f64,
    pub split_fraction: f64,
    pub seed: u64,
    pub n_inner: usize,
    pub n_outer: usize,
    pub inner: BTreeMap<Statistic, Vec<f64>>,
    pub outer: Vec<f64>,
}

impl CalibrationFile {
    pub fn from_model<T: Scalar>(m: &CalibrationModel<T>) -> Self {
        let widen = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let (n_inner, n_outer) = m.split_sizes();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            statistics: m.statistics().to_vec(),
            alpha: m.alpha(),
            gamma: m.gamma().as_f64(),
            split_fraction: m.split_fraction(),
            seed: m.seed(),
            n_inner,
            n_outer,
            inner: m.inner().iter().map(|(&s, e)| (s, widen(e.sorted_values()))).collect(),
            outer: widen(m.outer().sorted_values()),
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<CalibrationModel<T>> {
        if self.format != FORMAT {
            return Err(Error::Format(format!("expected format '{FORMAT}', got '{}'", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported calibration version {}, expected {VERSION}",
                self.version
            )));
        }
        let narrow = |v: Vec<f64>| EcdfModel::from_sorted(v.into_iter().map(T::of).collect());
        let corrupt = |e: Error| Error::Corruption(format!("calibration file: {e}"));
        if self.outer.len() != self.n_outer {
            return Err(Error::Corruption(format!(
                "n_outer = {} but {} outer values stored",
                self.n_outer,
                self.outer.len()
            )));
        }
        let mut inner = BTreeMap::new();
        for (s, v) in self.inner {
            if v.len() != self.n_inner {
                return Err(Error::Corruption(format!(
                    "n_inner = {} but {} values stored for '{s}'",
                    self.n_inner,
                    v.len()
                )));
            }
            inner.insert(s, narrow(v).map_err(corrupt)?);
        }
        let outer = narrow(self.outer).map_err(corrupt)?;
        CalibrationModel::from_parts(
            self.statistics,
            inner,
            outer,
            self.alpha,
            self.n_inner,
            self.n_outer,
            self.split_fraction,
            self.seed,
        )
    }
}

pub fn calibration_to_json<T: Scalar>(m: &CalibrationModel<T>) -> Result<String> {
    serde_json::to_string_pretty(&CalibrationFile::from_model(m))
        .map_err(|e| Error::Format(format!("calibration serialisation: {e}")))
}

pub fn calibration_from_json<T: Scalar>(text: &str) -> Result<CalibrationModel<T>> {
    let file: CalibrationFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("calibration file: {e}")))?;
    file.into_model()
}

pub fn write_calibration<T: Scalar>(path: &Path, m: &CalibrationModel<T>) -> Result<()> {
    write_atomic(path, calibration_to_json(m)?.as_bytes())
}

pub fn read_calibration<T: Scalar>(path: &Path) -> Result<CalibrationModel<T>> {
    calibration_from_json(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_statistics, CalibrationConfig};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64, alpha: f64) -> CalibrationModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = Array2::from_shape_simple_fn((60, 2), || rng.random::<f64>() * 10.0 - 3.0);
        let cfg = CalibrationConfig {
            alpha,
            seed,
            ..CalibrationConfig::default()
        };
        calibrate_statistics(stats.view(), &cfg).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let m = model(1, 0.05);
        write_calibration(&p, &m).unwrap();
        assert_eq!(read_calibration::<f64>(&p).unwrap(), m);
        let text = read_text(&p).unwrap();
        assert!(text.contains("\"ad\"") && text.contains("\"outer\""));
    }

    #[test]
    fn f32_model_round_trips() {
        let m = model(2, 0.1);
        let m32: CalibrationModel<f32> = calibration_from_json(&calibration_to_json(&m).unwrap()).unwrap();
        let back: CalibrationModel<f32> = calibration_from_json(&calibration_to_json(&m32).unwrap()).unwrap();
        assert_eq!(back, m32);
    }

    #[test]
    fn rejects_bad_files() {
        let m = model(3, 0.05);
        let mut f = CalibrationFile::from_model(&m);
        f.format = "other".into();
        assert!(matches!(f.into_model::<f64>(), Err(Error::Format(_))));
        let mut f = CalibrationFile::from_model(&m);
        f.outer.reverse();
        assert!(matches!(f.into_model::<f64>(), Err(Error::Corruption(_))));
        let mut f = CalibrationFile::from_model(&m);
        f.outer.pop();
        assert!(matches!(f.into_model::<f64>(), Err(Error::Corruption(_))));
        let text = calibration_to_json(&m).unwrap().replacen("{", "{\"extra\": 1,", 1);
        assert!(matches!(calibration_from_json::<f64>(&text), Err(Error::Format(_))));
        assert!(calibration_from_json::<f64>("not json").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(seed in any::<u64>(), alpha in 0.001f64..1.0) {
            let m = model(seed, alpha);
            let back: CalibrationModel<f64> = calibration_from_json(&calibration_to_json(&m).unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
