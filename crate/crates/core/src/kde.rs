//! One-dimensional Gaussian kernel density estimation with Scott's rule.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel<T> {
    centers: Vec<T>,
    bandwidth: T,
}

/// `n^(-1/5) · s` with `s` the sample standard deviation (divisor `n - 1`).
pub fn scott_bandwidth<T: Scalar>(values: &[T]) -> Result<T> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateKde(format!("need at least 2 values, got {n}")));
    }
    let nf = T::of_usize(n);
    let mean = values.iter().copied().sum::<T>() / nf;
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>();
    let sd = (ss / (nf - T::one())).sqrt();
    if !(sd > T::zero()) || !sd.is_finite() {
        return Err(Error::DegenerateKde(
            "calibration values have zero (or non-finite) variance".into(),
        ));
    }
    Ok(nf.powf(T::of(-0.2)) * sd)
}

impl<T: Scalar> KdeModel<T> {
    /// Fits on `values` with Scott's rule.
    pub fn fit(values: &[T]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kde values must be finite".into()));
        }
        let bandwidth = scott_bandwidth(values)?;
        Ok(Self {
            centers: values.to_vec(),
            bandwidth,
        })
    }

    /// Fits on at most `cap` values drawn without replacement. The bandwidth
    /// is computed on the retained subset.
    pub fn fit_subsampled<R: Rng + ?Sized>(values: &[T], cap: usize, rng: &mut R) -> Result<Self> {
        if values.len() <= cap {
            return Self::fit(values);
        }
        let mut idx = sample_indices(rng, values.len(), cap).into_vec();
        idx.sort_unstable();
        let subset: Vec<T> = idx.into_iter().map(|i| values[i]).collect();
        Self::fit(&subset)
    }

    pub fn with_bandwidth(centers: Vec<T>, bandwidth: T) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::DegenerateKde("no kernel centers".into()));
        }
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::DegenerateKde(format!("bandwidth {bandwidth} must be > 0")));
        }
        Ok(Self { centers, bandwidth })
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    /// `ln[(1/n) Σ N(x; cᵢ, h²)]`, evaluated with log-sum-exp.
    pub fn log_density(&self, x: T) -> T {
        if !x.is_finite() {
            return T::neg_infinity();
        }
        let h = self.bandwidth;
        let half = T::of(0.5);
        let mut best = T::neg_infinity();
        for &c in &self.centers {
            let u = (x - c) / h;
            best = best.max(-half * u * u);
        }
        let sum: T = self
            .centers
            .iter()
            .map(|&c| {
                let u = (x - c) / h;
                (-half * u * u - best).exp()
            })
            .sum();
        let norm = T::of_usize(self.centers.len()).ln() + h.ln() + T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        best + sum.ln() - norm
    }

    pub fn density(&self, x: T) -> T {
        self.log_density(x).exp()
    }
}
