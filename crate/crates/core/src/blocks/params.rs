//! Named parameter layouts and their deterministic initialization.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±gain * sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize, gain: f64 },
    Const(f64),
}

/// Init gain of the last layer on every residual branch, so each block
/// starts close to the identity.
pub const RESIDUAL_GAIN: f64 = 0.1;

/// Initial value of every PReLU slope.
pub const PRELU_SLOPE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: String, shape: &[usize], init: Init) -> Self {
        Self {
            name,
            shape: shape.to_vec(),
            init,
        }
    }

    /// Multiplies the initial range of a Glorot spec by `gain`.
    pub fn with_gain(mut self, gain: f64) -> Self {
        if let Init::Glorot { gain: g, .. } = &mut self.init {
            *g *= gain;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor {
        match self.init {
            Init::Glorot { fan_in, fan_out, gain } => {
                let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::uniform(&self.shape, -bound, bound, rng)
            }
            Init::Const(v) => Tensor::full(&self.shape, v),
        }
    }
}

/// Samples every spec in order.
pub fn init_params(specs: &[ParamSpec], rng: &mut impl Rng) -> IndexMap<String, Tensor> {
    specs.iter().map(|s| (s.name.clone(), s.sample(rng))).collect()
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Looks up a parameter by full name.
pub type Lookup<'a, T> = dyn FnMut(&str) -> Result<T> + 'a;

/// Lookup into a name -> tensor map that reports missing names.
pub fn map_lookup<'a, T: Clone>(map: &'a IndexMap<String, T>) -> impl FnMut(&str) -> Result<T> + 'a {
    move |name| {
        map.get(name)
            .cloned()
            .ok_or_else(|| invalid("parameters", format!("missing parameter `{name}`")))
    }
}

/// Weights and optional bias of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: T,
    pub bias: Option<T>,
}

impl<T> ConvParams<T> {
    pub fn layout(prefix: &str, spec: ConvSpec, bias: bool, out: &mut Vec<ParamSpec>) {
        let (fan_in, fan_out) = spec.fans();
        out.push(ParamSpec::new(
            join(prefix, "weight"),
            &spec.weight_shape(),
            Init::Glorot { fan_in, fan_out, gain: 1.0 },
        ));
        if bias {
            out.push(ParamSpec::new(join(prefix, "bias"), &[spec.out_channels], Init::Const(0.0)));
        }
    }

    pub fn gather(prefix: &str, bias: bool, get: &mut Lookup<'_, T>) -> Result<Self> {
        Ok(Self {
            weight: get(&join(prefix, "weight"))?,
            bias: if bias { Some(get(&join(prefix, "bias"))?) } else { None },
        })
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ConvParams<U> {
        ConvParams {
            weight: f(&self.weight),
            bias: self.bias.as_ref().map(f),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
}

/// A dense layer `x W + b` acting on `[batch, in]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> LinearParams<T> {
    pub fn layout(prefix: &str, inputs: usize, outputs: usize, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec::new(
            join(prefix, "weight"),
            &[inputs, outputs],
            Init::Glorot {
                fan_in: inputs,
                fan_out: outputs,
                gain: 1.0,
            },
        ));
        out.push(ParamSpec::new(join(prefix, "bias"), &[outputs], Init::Const(0.0)));
    }

    pub fn gather(prefix: &str, get: &mut Lookup<'_, T>) -> Result<Self> {
        Ok(Self {
            weight: get(&join(prefix, "weight"))?,
            bias: get(&join(prefix, "bias"))?,
        })
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LinearParams<U> {
        LinearParams {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        f(&self.weight);
        f(&self.bias);
    }
}
