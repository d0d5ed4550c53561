use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::VectorField;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Silu => a / (T::one() + (-a).exp()),
            Activation::Tanh => a.tanh(),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Silu => {
                let s = T::one() / (T::one() + (-a).exp());
                s * (T::one() + a * (T::one() - s))
            }
            Activation::Tanh => {
                let th = a.tanh();
                T::one() - th * th
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowArchitecture {
    pub dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Number of sinusoidal frequency pairs in the time embedding.
    #[serde(default = "default_frequencies")]
    pub time_frequencies: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}

fn default_activation() -> Activation {
    Activation::Silu
}

fn default_frequencies() -> usize {
    8
}

impl FlowArchitecture {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hidden: default_hidden(),
            activation: default_activation(),
            time_frequencies: default_frequencies(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.dim + 1 + 2 * self.time_frequencies
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(self.dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `fan_in × fan_out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Fully-connected velocity network `v(x, t)` on `[x, t, sin(πkt), cos(πkt)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel<T> {
    arch: FlowArchitecture,
    layers: Vec<Dense<T>>,
}

pub(crate) struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> FlowModel<T> {
    /// Uniform `±1/√fan_in` initialisation from a seeded ChaCha stream.
    pub fn new(arch: FlowArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    T::of(rng.random_range(-bound..bound))
                });
                let bias = Array1::from_shape_simple_fn(fan_out, || T::of(rng.random_range(-bound..bound)));
                Dense { weight, bias }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn from_layers(arch: FlowArchitecture, layers: Vec<Dense<T>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Format(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (k, ((i, o), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.weight.dim() != (*i, *o) || l.bias.len() != *o {
                return Err(Error::Format(format!(
                    "layer {k}: expected {i}x{o} weights, got {:?} and bias {}",
                    l.weight.dim(),
                    l.bias.len()
                )));
            }
        }
        if layers
            .iter()
            .any(|l| l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::Corruption("non-finite flow parameter".into()));
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &FlowArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    /// Converts the parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FlowModel<U> {
        let conv = |v: &T| U::of(v.as_f64());
        FlowModel {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
        }
    }

    fn embed(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array2<T> {
        let (n, d) = x.dim();
        let k = self.arch.time_frequencies;
        let mut input = Array2::zeros((n, self.arch.input_width()));
        input.slice_mut(ndarray::s![.., ..d]).assign(&x);
        for i in 0..n {
            let ti = t[i];
            input[[i, d]] = ti;
            for f in 0..k {
                let w = T::PI() * T::of_usize(f + 1) * ti;
                input[[i, d + 1 + 2 * f]] = w.sin();
                input[[i, d + 2 + 2 * f]] = w.cos();
            }
        }
        input
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> (Array2<T>, ForwardCache<T>) {
        let act = self.arch.activation;
        let last = self.layers.len() - 1;
        let mut h = self.embed(x, t);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        for (k, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            if k == last {
                return (a, ForwardCache { inputs, pre });
            }
            h = a.mapv(|v| act.apply(v));
            pre.push(a);
        }
        unreachable!("network has at least one layer")
    }

    /// Gradients of `Σ grad_out ⊙ v` with respect to every layer.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, grad_out: Array2<T>) -> Vec<Dense<T>> {
        let act = self.arch.activation;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            grads.push(Dense {
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if k > 0 {
                let back = delta.dot(&self.layers[k].weight.t());
                delta = ndarray::Zip::from(&back)
                    .and(&cache.pre[k - 1])
                    .map_collect(|&g, &a| g * act.derivative(a));
            }
        }
        grads.reverse();
        grads
    }
}

impl<T: Scalar> VectorField<T> for FlowModel<T> {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn velocity(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array2<T> {
        let act = self.arch.activation;
        let last = self.layers.len() - 1;
        let mut h = self.embed(x, t);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weight) + &layer.bias;
            if k < last {
                a.mapv_inplace(|v| act.apply(v));
            }
            h = a;
        }
        h
    }
}
