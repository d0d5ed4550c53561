use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::VectorField;
use super::ode::{solve, SolverConfig};
use crate::error::{Error, Result};
use crate::special::standard_normal_log_density;
use crate::Scalar;

/// Largest dimension for which the divergence is evaluated exactly.
pub const MAX_EXACT_DIVERGENCE_DIM: usize = 64;

/// Per-sample likelihood decomposition, all in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatVector<T> {
    pub log_likelihood: T,
    /// `log N(z; 0, I)` of the latent `z = φ⁻¹(x)`.
    pub latent_log_prob: T,
    /// Accumulated divergence along the inverse trajectory.
    pub divergence_integral: T,
}

/// Latents and likelihood statistics for every row of `x`.
#[derive(Clone, Debug)]
pub struct LikelihoodBatch<T> {
    pub latents: Array2<T>,
    pub stats: Vec<StatVector<T>>,
}

/// Rows per parallel chunk in [`log_likelihood_batch`].
const CHUNK: usize = 256;

/// Integrates `(x, ℓ)` from `t = 1` to `t = 0` with `dℓ/dt = div v(x, t)`.
///
/// `ℓ(0)` is the log-determinant term of the change of variables, so
/// `log p(x) = log N(x(0)) + ℓ(0)`; the zero field gives the standard-normal
/// log-density of `x` exactly.
pub fn log_likelihood_batch<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    x: ArrayView2<'_, T>,
    cfg: &SolverConfig,
) -> Result<LikelihoodBatch<T>> {
    let d = field.dim();
    if d > MAX_EXACT_DIVERGENCE_DIM {
        return Err(Error::UnsupportedDimension {
            dim: d,
            max: MAX_EXACT_DIVERGENCE_DIM,
        });
    }
    if x.ncols() != d {
        return Err(Error::InvalidInput(format!(
            "data has dimension {}, field expects {d}",
            x.ncols()
        )));
    }
    let rhs = |y: ArrayView2<'_, T>, t: ArrayView1<'_, T>| {
        let state = y.slice(s![.., ..d]);
        let mut out = Array2::zeros(y.raw_dim());
        out.slice_mut(s![.., ..d]).assign(&field.velocity(state, t));
        out.column_mut(d).assign(&field.divergence(state, t));
        out
    };
    let n = x.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<Array2<T>> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + CHUNK).min(n);
            let mut y0 = Array2::zeros((hi - lo, d + 1));
            y0.slice_mut(s![.., ..d]).assign(&x.slice(s![lo..hi, ..]));
            solve(rhs, y0.view(), T::one(), T::zero(), cfg)
        })
        .collect::<Result<_>>()?;
    let mut latents = Array2::zeros((n, d));
    let mut stats = Vec::with_capacity(n);
    let mut row = 0;
    for part in parts {
        for r in part.outer_iter() {
            let z = r.slice(s![..d]);
            latents.row_mut(row).assign(&z);
            let latent_log_prob = standard_normal_log_density(&z.to_vec());
            let divergence_integral = r[d];
            stats.push(StatVector {
                log_likelihood: latent_log_prob + divergence_integral,
                latent_log_prob,
                divergence_integral,
            });
            row += 1;
        }
    }
    Ok(LikelihoodBatch { latents, stats })
}

pub fn log_likelihood<T: Scalar, F: VectorField<T> + ?Sized>(field: &F, x: &[T], cfg: &SolverConfig) -> Result<T> {
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
    Ok(log_likelihood_batch(field, row.view(), cfg)?.stats[0].log_likelihood)
}
