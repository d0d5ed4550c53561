use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::field::VectorField;
use super::mlp::{Dense, FlowModel};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global gradient norm.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 5000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Source of i.i.d. training rows.
pub trait DataSampler<T> {
    fn dim(&self) -> usize;

    fn sample(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Array2<T>;
}

/// Samples rows uniformly with replacement from a fixed dataset.
#[derive(Clone, Debug)]
pub struct DatasetSampler<T> {
    data: Array2<T>,
}

impl<T: Scalar> DatasetSampler<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        Ok(Self { data })
    }
}

impl<T: Scalar> DataSampler<T> for DatasetSampler<T> {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn sample(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.data.nrows())).collect();
        self.data.select(ndarray::Axis(0), &idx)
    }
}

fn check_batch<T: Scalar>(data: ArrayView2<'_, T>, noise: ArrayView2<'_, T>, times: ArrayView1<'_, T>) -> Result<()> {
    if data.dim() != noise.dim() || times.len() != data.nrows() {
        return Err(Error::InvalidInput(format!(
            "batch shapes disagree: data {:?}, noise {:?}, times {}",
            data.dim(),
            noise.dim(),
            times.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if times.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return Err(Error::InvalidInput("times must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Interpolant `(1-t) z + t x` and regression target `x - z`.
fn interpolate<T: Scalar>(data: ArrayView2<'_, T>, noise: ArrayView2<'_, T>, times: ArrayView1<'_, T>) -> (Array2<T>, Array2<T>) {
    let mut xt = Array2::zeros(data.raw_dim());
    for (i, mut row) in xt.outer_iter_mut().enumerate() {
        let t = times[i];
        Zip::from(&mut row)
            .and(data.row(i))
            .and(noise.row(i))
            .for_each(|o, &x, &z| *o = (T::one() - t) * z + t * x);
    }
    (xt, &data - &noise)
}

/// Mean over batch and dimensions of `‖v(x_t, t) - (x - z)‖²`.
pub fn flow_matching_loss<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    data: ArrayView2<'_, T>,
    noise: ArrayView2<'_, T>,
    times: ArrayView1<'_, T>,
) -> Result<T> {
    check_batch(data, noise, times)?;
    if data.ncols() != field.dim() {
        return Err(Error::InvalidInput("batch dimension differs from field".into()));
    }
    let (xt, target) = interpolate(data, noise, times);
    let v = field.velocity(xt.view(), times);
    let sq: T = Zip::from(&v).and(&target).fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(sq / T::of_usize(v.len()))
}

fn draw_batch<T: Scalar, S: DataSampler<T> + ?Sized>(
    sampler: &mut S,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let data = sampler.sample(n, rng);
    let noise = Array2::from_shape_simple_fn(data.raw_dim(), || T::of(StandardNormal.sample(rng)));
    let times = Array1::from_shape_simple_fn(n, || T::of(rng.random::<f64>()));
    (data, noise, times)
}

/// Flow-matching loss on a fresh batch drawn with its own seed.
pub fn held_out_loss<T: Scalar, S: DataSampler<T> + ?Sized>(
    model: &FlowModel<T>,
    sampler: &mut S,
    n: usize,
    seed: u64,
) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (data, noise, times) = draw_batch(sampler, n, &mut rng);
    flow_matching_loss(model, data.view(), noise.view(), times.view())
}

struct Adam<T> {
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(model: &FlowModel<T>) -> Self {
        let zeros: Vec<Dense<T>> = model
            .layers()
            .iter()
            .map(|l| Dense {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, model: &mut FlowModel<T>, grads: &[Dense<T>], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let lr = T::of(cfg.learning_rate);
        let eps = T::of(cfg.eps);
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let apply = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in model.layers_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

fn clip_global_norm<T: Scalar>(grads: &mut [Dense<T>], max_norm: f64) {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.weight.iter().chain(g.bias.iter()))
        .map(|v| v.as_f64() * v.as_f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads {
            g.weight.mapv_inplace(|v| v * s);
            g.bias.mapv_inplace(|v| v * s);
        }
    }
}

/// Trains `model` by flow matching against `sampler`. Deterministic given
/// `cfg.seed`. `on_step` receives every step index and its batch loss.
pub fn train_with<T, S, C>(mut model: FlowModel<T>, sampler: &mut S, cfg: &TrainConfig, mut on_step: C) -> Result<FlowModel<T>>
where
    T: Scalar,
    S: DataSampler<T> + ?Sized,
    C: FnMut(usize, T),
{
    cfg.validate()?;
    let d = model.architecture().dim;
    if sampler.dim() != d {
        return Err(Error::InvalidInput(format!(
            "sampler yields dimension {}, model has {d}",
            sampler.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model);
    let scale = T::of(2.0) / T::of_usize(cfg.batch_size * d);
    for step in 0..cfg.steps {
        let (data, noise, times) = draw_batch(sampler, cfg.batch_size, &mut rng);
        let (xt, target) = interpolate(data.view(), noise.view(), times.view());
        let (v, cache) = model.forward_cached(xt.view(), times.view());
        let resid = &v - &target;
        let loss = resid.iter().map(|&r| r * r).sum::<T>() * scale / T::of(2.0);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                loss: loss.as_f64(),
            });
        }
        on_step(step, loss);
        let mut grads = model.backward(&cache, resid * scale);
        clip_global_norm(&mut grads, cfg.clip_norm);
        adam.update(&mut model, &grads, cfg);
    }
    Ok(model)
}

pub fn train<T: Scalar, S: DataSampler<T> + ?Sized>(model: FlowModel<T>, sampler: &mut S, cfg: &TrainConfig) -> Result<FlowModel<T>> {
    train_with(model, sampler, cfg, |_, _| {})
}
