//! Batched explicit Runge-Kutta integration.
//!
//! Every row of the state matrix is an independent initial-value problem. The
//! adaptive Dormand-Prince 5(4) solver keeps a separate time, step size and
//! error history per row; rows leave the active set once they reach the end
//! of the interval.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::field::VectorField;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverMethod {
    #[serde(rename = "dopri45", alias = "dopri5")]
    Dopri45,
    #[serde(rename = "rk4")]
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub atol: f64,
    pub rtol: f64,
    /// Step attempts allowed per row (adaptive method).
    pub max_steps: usize,
    /// Number of uniform steps (fixed-step method).
    pub fixed_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Dopri45,
            atol: 1e-5,
            rtol: 1e-5,
            max_steps: 10_000,
            fixed_steps: 100,
        }
    }
}

impl SolverConfig {
    pub fn dopri(atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            ..Self::default()
        }
    }

    pub fn rk4(steps: usize) -> Self {
        Self {
            method: SolverMethod::Rk4,
            fixed_steps: steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.rtol > 0.0 && self.atol.is_finite() && self.rtol.is_finite()) {
            return Err(Error::Config(format!(
                "solver tolerances must be positive, got atol = {}, rtol = {}",
                self.atol, self.rtol
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.method == SolverMethod::Rk4 && self.fixed_steps == 0 {
            return Err(Error::Config("rk4 needs fixed_steps >= 1".into()));
        }
        Ok(())
    }
}

/// Forward runs noise to data (`t: 0 → 1`); inverse runs data to noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn span<T: Scalar>(self) -> (T, T) {
        match self {
            Direction::Forward => (T::zero(), T::one()),
            Direction::Inverse => (T::one(), T::zero()),
        }
    }
}

/// Integrates a single state through `field`.
pub fn integrate<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &[T],
    direction: Direction,
    cfg: &SolverConfig,
) -> Result<Vec<T>> {
    let x = Array2::from_shape_vec((1, x0.len()), x0.to_vec()).expect("row vector");
    Ok(integrate_batch(field, x.view(), direction, cfg)?.into_raw_vec_and_offset().0)
}

/// Integrates every row of `x0` through `field`.
pub fn integrate_batch<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: ArrayView2<'_, T>,
    direction: Direction,
    cfg: &SolverConfig,
) -> Result<Array2<T>> {
    if x0.ncols() != field.dim() {
        return Err(Error::InvalidInput(format!(
            "state has dimension {}, field expects {}",
            x0.ncols(),
            field.dim()
        )));
    }
    let (t0, t1) = direction.span();
    solve(|y, t| field.velocity(y, t), x0, t0, t1, cfg)
}

/// Solves `dy/dt = f(y, t)` row-wise from `t0` to `t1`.
pub fn solve<T, F>(f: F, y0: ArrayView2<'_, T>, t0: T, t1: T, cfg: &SolverConfig) -> Result<Array2<T>>
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>, ArrayView1<'_, T>) -> Array2<T>,
{
    cfg.validate()?;
    if let Some(v) = y0.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("initial state has non-finite entry {v}")));
    }
    if y0.nrows() == 0 || t0 == t1 {
        return Ok(y0.to_owned());
    }
    match cfg.method {
        SolverMethod::Rk4 => rk4(&f, y0, t0, t1, cfg.fixed_steps),
        SolverMethod::Dopri45 => dopri45(&f, y0, t0, t1, cfg),
    }
}

fn check_finite<T: Scalar>(y: &Array2<T>, t: T) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SolverDivergence(format!("state became non-finite at t = {t}")))
    }
}

fn rk4<T, F>(f: &F, y0: ArrayView2<'_, T>, t0: T, t1: T, steps: usize) -> Result<Array2<T>>
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>, ArrayView1<'_, T>) -> Array2<T>,
{
    let n = y0.nrows();
    let h = (t1 - t0) / T::of_usize(steps);
    let half = h / T::of(2.0);
    let sixth = h / T::of(6.0);
    let mut y = y0.to_owned();
    for s in 0..steps {
        let t = t0 + T::of_usize(s) * h;
        let tv = Array1::from_elem(n, t);
        let tm = Array1::from_elem(n, t + half);
        let te = Array1::from_elem(n, t + h);
        let k1 = f(y.view(), tv.view());
        let k2 = f((&y + &(&k1 * half)).view(), tm.view());
        let k3 = f((&y + &(&k2 * half)).view(), tm.view());
        let k4 = f((&y + &(&k3 * h)).view(), te.view());
        Zip::from(&mut y)
            .and(&k1)
            .and(&k2)
            .and(&k3)
            .and(&k4)
            .for_each(|y, &a, &b, &c, &d| *y += sixth * (a + (b + c) * T::of(2.0) + d));
        check_finite(&y, t + h)?;
    }
    Ok(y)
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI step-size control.
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MIN_STEP: f64 = 1e-14;

/// `y + Σ cⱼ h kⱼ` with a per-row step `h`.
fn stage<T: Scalar>(y: &Array2<T>, h: &Array1<T>, terms: &[(f64, &Array2<T>)]) -> Array2<T> {
    let mut out = y.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let hi = h[i];
        for &(c, k) in terms {
            let ch = T::of(c) * hi;
            Zip::from(&mut row).and(k.row(i)).for_each(|o, &kv| *o += ch * kv);
        }
    }
    out
}

fn rms_rows<T: Scalar>(num: &Array2<T>, scale: &Array2<T>) -> Vec<f64> {
    let d = num.ncols() as f64;
    num.outer_iter()
        .zip(scale.outer_iter())
        .map(|(a, s)| {
            let ss: f64 = a
                .iter()
                .zip(s.iter())
                .map(|(&a, &s)| {
                    let r = a.as_f64() / s.as_f64();
                    r * r
                })
                .sum();
            (ss / d).sqrt()
        })
        .collect()
}

fn tolerance_scale<T: Scalar>(a: &Array2<T>, b: Option<&Array2<T>>, cfg: &SolverConfig) -> Array2<T> {
    let (atol, rtol) = (T::of(cfg.atol), T::of(cfg.rtol));
    match b {
        Some(b) => Zip::from(a).and(b).map_collect(|&a, &b| atol + rtol * a.abs().max(b.abs())),
        None => a.mapv(|a| atol + rtol * a.abs()),
    }
}

/// Initial step per row.
fn initial_steps<T, F>(f: &F, y: &Array2<T>, k1: &Array2<T>, t0: T, t1: T, cfg: &SolverConfig) -> Array1<T>
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>, ArrayView1<'_, T>) -> Array2<T>,
{
    let n = y.nrows();
    let span = (t1 - t0).abs().as_f64();
    let sign = if t1 > t0 { 1.0 } else { -1.0 };
    let sk = tolerance_scale(y, None, cfg);
    let dnf = rms_rows(k1, &sk);
    let dny = rms_rows(y, &sk);
    let h0: Vec<f64> = dnf
        .iter()
        .zip(&dny)
        .map(|(&f, &y)| {
            let h = if f * f <= 1e-10 || y * y <= 1e-10 { 1e-6 } else { 0.01 * y / f };
            h.min(span)
        })
        .collect();
    let hs = Array1::from_iter(h0.iter().map(|&h| T::of(sign * h)));
    let y1 = stage(y, &hs, &[(1.0, k1)]);
    let t_probe = Array1::from_iter(hs.iter().map(|&h| t0 + h));
    let k2 = f(y1.view(), t_probe.view());
    let der2 = rms_rows(&(&k2 - k1), &sk);
    Array1::from_iter((0..n).map(|i| {
        let der12 = (der2[i] / h0[i]).max(dnf[i]);
        let h1 = if der12 <= 1e-15 {
            (h0[i] * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        T::of(sign * (100.0 * h0[i]).min(h1).min(span))
    }))
}

fn dopri45<T, F>(f: &F, y0: ArrayView2<'_, T>, t0: T, t1: T, cfg: &SolverConfig) -> Result<Array2<T>>
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>, ArrayView1<'_, T>) -> Array2<T>,
{
    let n = y0.nrows();
    let forward = t1 > t0;
    let mut y = y0.to_owned();
    let mut t = Array1::from_elem(n, t0);
    let mut k1 = f(y.view(), t.view());
    let mut h = initial_steps(f, &y, &k1, t0, t1, cfg);
    let mut err_old = vec![1e-4f64; n];
    let mut rejected = vec![false; n];
    let mut attempts = vec![0usize; n];
    let mut active: Vec<usize> = (0..n).collect();

    let expo = 0.2 - 0.75 * BETA;
    while !active.is_empty() {
        for &i in &active {
            attempts[i] += 1;
            if attempts[i] > cfg.max_steps {
                return Err(Error::SolverFailure(format!(
                    "exceeded {} steps at t = {} (row {i})",
                    cfg.max_steps, t[i]
                )));
            }
        }
        let ya = y.select(Axis(0), &active);
        let ta = t.select(Axis(0), &active);
        let k1a = k1.select(Axis(0), &active);
        // Clip the last step onto the endpoint.
        let mut last = vec![false; active.len()];
        let ha = Array1::from_iter(active.iter().enumerate().map(|(j, &i)| {
            let remaining = t1 - t[i];
            if (forward && h[i] >= remaining) || (!forward && h[i] <= remaining) {
                last[j] = true;
                remaining
            } else {
                h[i]
            }
        }));
        let at = |c: f64| Array1::from_iter(ta.iter().zip(ha.iter()).map(|(&t, &h)| t + T::of(c) * h));

        let k2 = f(stage(&ya, &ha, &[(A21, &k1a)]).view(), at(C2).view());
        let k3 = f(stage(&ya, &ha, &[(A31, &k1a), (A32, &k2)]).view(), at(C3).view());
        let k4 = f(stage(&ya, &ha, &[(A41, &k1a), (A42, &k2), (A43, &k3)]).view(), at(C4).view());
        let k5 = f(
            stage(&ya, &ha, &[(A51, &k1a), (A52, &k2), (A53, &k3), (A54, &k4)]).view(),
            at(C5).view(),
        );
        let k6 = f(
            stage(&ya, &ha, &[(A61, &k1a), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]).view(),
            at(1.0).view(),
        );
        let y_new = stage(&ya, &ha, &[(A71, &k1a), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(y_new.view(), at(1.0).view());
        let zero = Array2::zeros(ya.raw_dim());
        let err = stage(
            &zero,
            &ha,
            &[(E1, &k1a), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
        );
        let scale = tolerance_scale(&ya, Some(&y_new), cfg);
        let norms = rms_rows(&err, &scale);

        let mut still = Vec::with_capacity(active.len());
        for (j, &i) in active.iter().enumerate() {
            let hj = ha[j].as_f64();
            let row_ok = y_new.row(j).iter().all(|v| v.is_finite()) && norms[j].is_finite();
            if !row_ok {
                let shrunk = hj * FAC_MIN;
                if shrunk.abs() < MIN_STEP {
                    return Err(Error::SolverDivergence(format!(
                        "non-finite state near t = {} (row {i})",
                        t[i]
                    )));
                }
                h[i] = T::of(shrunk);
                rejected[i] = true;
                still.push(i);
                continue;
            }
            let e = norms[j];
            let fac11 = e.powf(expo);
            if e <= 1.0 {
                let fac = (fac11 / err_old[i].powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = hj / fac;
                if rejected[i] {
                    h_new = h_new.abs().min(hj.abs()) * hj.signum();
                }
                err_old[i] = e.max(1e-4);
                rejected[i] = false;
                y.row_mut(i).assign(&y_new.row(j));
                k1.row_mut(i).assign(&k7.row(j));
                if last[j] {
                    t[i] = t1;
                } else {
                    t[i] += ha[j];
                    h[i] = T::of(h_new);
                    still.push(i);
                }
            } else {
                let h_new = hj / (fac11 / SAFETY).min(1.0 / FAC_MIN);
                if h_new.abs() < MIN_STEP {
                    return Err(Error::SolverFailure(format!(
                        "step size underflow at t = {} (row {i})",
                        t[i]
                    )));
                }
                h[i] = T::of(h_new);
                rejected[i] = true;
                still.push(i);
            }
        }
        active = still;
    }
    check_finite(&y, t1)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::field::{LinearField, ZeroField};
    use ndarray::array;

    #[test]
    fn exponential_growth() {
        let f = LinearField::scaled_identity(1, 1.0f64).unwrap();
        let cfg = SolverConfig::default();
        let y = integrate(&f, &[1.0], Direction::Forward, &cfg).unwrap();
        let e = std::f64::consts::E;
        assert!((y[0] - e).abs() <= cfg.atol + cfg.rtol * e, "{}", y[0]);
        let back = integrate(&f, &y, Direction::Inverse, &cfg).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_field_is_exact_identity() {
        let f = ZeroField::new(3);
        let x = array![[1.5f64, -2.25, 1e-300], [0.0, 7.0, -0.1]];
        for cfg in [SolverConfig::default(), SolverConfig::rk4(10)] {
            for dir in [Direction::Forward, Direction::Inverse] {
                assert_eq!(integrate_batch(&f, x.view(), dir, &cfg).unwrap(), x);
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = LinearField::scaled_identity(1, 1.0f64).unwrap();
        let e = std::f64::consts::E;
        let err = |n| (integrate(&f, &[1.0], Direction::Forward, &SolverConfig::rk4(n)).unwrap()[0] - e).abs();
        let ratio = err(10) / err(20);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn rows_adapt_independently() {
        // Rows with very different rates share one call; each must meet its
        // own tolerance.
        let f = LinearField::diagonal(&[1.0f64]).unwrap();
        let x = array![[1.0], [1e-3], [50.0]];
        let cfg = SolverConfig::dopri(1e-8, 1e-8);
        let y = integrate_batch(&f, x.view(), Direction::Forward, &cfg).unwrap();
        for i in 0..3 {
            let exact = x[[i, 0]] * std::f64::consts::E;
            assert!((y[[i, 0]] - exact).abs() < 1e-6 * exact.abs().max(1.0));
        }
        let time_varying = |y: ArrayView2<'_, f64>, t: ArrayView1<'_, f64>| {
            let mut out = y.to_owned();
            for (i, mut r) in out.outer_iter_mut().enumerate() {
                r.fill(t[i] * t[i]);
            }
            out
        };
        let y = solve(time_varying, array![[0.0], [2.0]].view(), 0.0, 1.0, &cfg).unwrap();
        assert!((y[[0, 0]] - 1.0 / 3.0).abs() < 1e-8);
        assert!((y[[1, 0]] - 7.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn max_steps_exceeded() {
        let f = LinearField::scaled_identity(2, 30.0f64).unwrap();
        let cfg = SolverConfig {
            max_steps: 3,
            ..SolverConfig::dopri(1e-10, 1e-10)
        };
        let r = integrate(&f, &[1.0, 1.0], Direction::Forward, &cfg);
        assert!(matches!(r, Err(Error::SolverFailure(_))), "{r:?}");
    }

    #[test]
    fn blowup_is_reported() {
        // dy/dt = y² from y = 2 explodes at t = 0.5.
        let blow = |y: ArrayView2<'_, f64>, _t: ArrayView1<'_, f64>| y.mapv(|v| v * v);
        let r = solve(blow, array![[1e200]].view(), 0.0, 1.0, &SolverConfig::rk4(4));
        assert!(matches!(r, Err(Error::SolverDivergence(_))), "{r:?}");
        let r = solve(blow, array![[2.0]].view(), 0.0, 1.0, &SolverConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn rejects_bad_config_and_input() {
        let f = ZeroField::new(1);
        let bad = SolverConfig {
            atol: 0.0,
            ..SolverConfig::default()
        };
        assert!(matches!(integrate(&f, &[0.0], Direction::Forward, &bad), Err(Error::Config(_))));
        assert!(integrate(&f, &[f64::NAN], Direction::Forward, &SolverConfig::default()).is_err());
        assert!(integrate(&f, &[0.0, 1.0], Direction::Forward, &SolverConfig::default()).is_err());
    }

    #[test]
    fn dopri_order_of_accuracy() {
        // Tightening the tolerance tightens the global error.
        let f = LinearField::new(array![[0.0f64, 1.0], [-1.0, 0.0]]).unwrap();
        let err = |tol: f64| {
            let y = integrate(&f, &[1.0, 0.0], Direction::Forward, &SolverConfig::dopri(tol, tol)).unwrap();
            ((y[0] - 1f64.cos()).powi(2) + (y[1] + 1f64.sin()).powi(2)).sqrt()
        };
        assert!(err(1e-4) < 1e-3);
        assert!(err(1e-9) < 1e-8);
        assert!(err(1e-9) < err(1e-4));
    }
}
