//! Squeeze-and-excitation channel attention.

use rand::Rng;

use super::params::{init_params, join, map_lookup, LinearParams, Lookup, ParamSpec};
use crate::error::{shape_err, Result};
use crate::tensor::{Tensor, Var};

/// Default channel reduction ratio.
pub const SE_REDUCTION: usize = 16;
/// The bottleneck never has fewer units than this.
pub const SE_MIN_HIDDEN: usize = 4;

pub fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(SE_MIN_HIDDEN)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeParams<T> {
    pub reduce: LinearParams<T>,
    pub expand: LinearParams<T>,
}

impl<T> SeParams<T> {
    pub fn layout(prefix: &str, channels: usize, reduction: usize) -> Vec<ParamSpec> {
        let hidden = se_hidden(channels, reduction);
        let mut out = Vec::new();
        LinearParams::<T>::layout(&join(prefix, "reduce"), channels, hidden, &mut out);
        LinearParams::<T>::layout(&join(prefix, "expand"), hidden, channels, &mut out);
        out
    }

    pub fn gather(prefix: &str, get: &mut Lookup<'_, T>) -> Result<Self> {
        Ok(Self {
            reduce: LinearParams::gather(&join(prefix, "reduce"), get)?,
            expand: LinearParams::gather(&join(prefix, "expand"), get)?,
        })
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SeParams<U> {
        SeParams {
            reduce: self.reduce.map(f),
            expand: self.expand.map(f),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }
}

impl SeParams<Tensor> {
    pub fn init(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let map = init_params(&Self::layout("", channels, reduction), rng);
        let mut get = map_lookup(&map);
        let out = Self::gather("", &mut get).expect("layout and gather agree");
        out
    }
}

/// Per-channel gates `s = sigmoid(expand(relu(reduce(mean_hw(x)))))`,
/// shaped `[B, C]`.
pub fn se_gates<'t>(x: Var<'t>, p: &SeParams<Var<'t>>) -> Result<Var<'t>> {
    let channels = x.shape().get(1).copied().unwrap_or(0);
    let w = p.reduce.weight.shape();
    if w.first() != Some(&channels) {
        return Err(shape_err("se_forward", format!("reduce weight [{channels}, _]"), format!("{w:?}")));
    }
    x.global_avg_pool()?
        .matmul(p.reduce.weight)?
        .add_row_bias(p.reduce.bias)?
        .relu()
        .matmul(p.expand.weight)?
        .add_row_bias(p.expand.bias)
        .map(Var::sigmoid)
}

/// Rescales each channel of `x` by its gate.
pub fn se_forward<'t>(x: Var<'t>, p: &SeParams<Var<'t>>) -> Result<Var<'t>> {
    x.scale_channels(se_gates(x, p)?)
}
