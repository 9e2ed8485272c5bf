//! Densely connected residual block.
//!
//! Three 3x3 convolutions, each followed by PReLU. Layer `k` sees the channel
//! concatenation of the block input and every earlier layer output, so the
//! input widths are `C`, `2C` and `3C`; every layer emits `C` channels and the
//! block input is added to the last one.

use rand::Rng;

use super::params::{init_params, join, map_lookup, ConvParams, Init, Lookup, ParamSpec, PRELU_SLOPE, RESIDUAL_GAIN};
use crate::error::{shape_err, Result};
use crate::tensor::{ConvSpec, Var};

pub const DCR_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DcrParams<T> {
    pub convs: [ConvParams<T>; DCR_LAYERS],
    pub slopes: [T; DCR_LAYERS],
}

fn conv_spec(channels: usize, layer: usize) -> ConvSpec {
    ConvSpec::new((layer + 1) * channels, channels, 3).expect("positive channels")
}

impl<T> DcrParams<T> {
    pub fn layout(prefix: &str, channels: usize) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for k in 0..DCR_LAYERS {
            ConvParams::<T>::layout(&join(prefix, &format!("conv{k}")), conv_spec(channels, k), true, &mut out);
            if k + 1 == DCR_LAYERS {
                let w = out.len() - 2;
                out[w] = out[w].clone().with_gain(RESIDUAL_GAIN);
            }
            out.push(ParamSpec::new(
                join(prefix, &format!("prelu{k}")),
                &[channels],
                Init::Const(PRELU_SLOPE),
            ));
        }
        out
    }

    pub fn gather(prefix: &str, get: &mut Lookup<'_, T>) -> Result<Self> {
        let c0 = ConvParams::gather(&join(prefix, "conv0"), true, get)?;
        let s0 = get(&join(prefix, "prelu0"))?;
        let c1 = ConvParams::gather(&join(prefix, "conv1"), true, get)?;
        let s1 = get(&join(prefix, "prelu1"))?;
        let c2 = ConvParams::gather(&join(prefix, "conv2"), true, get)?;
        let s2 = get(&join(prefix, "prelu2"))?;
        Ok(Self {
            convs: [c0, c1, c2],
            slopes: [s0, s1, s2],
        })
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DcrParams<U> {
        // Same order as `visit`.
        let (c0, s0) = (self.convs[0].map(f), f(&self.slopes[0]));
        let (c1, s1) = (self.convs[1].map(f), f(&self.slopes[1]));
        let (c2, s2) = (self.convs[2].map(f), f(&self.slopes[2]));
        DcrParams {
            convs: [c0, c1, c2],
            slopes: [s0, s1, s2],
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        for k in 0..DCR_LAYERS {
            self.convs[k].visit(f);
            f(&self.slopes[k]);
        }
    }
}

impl DcrParams<crate::tensor::Tensor> {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        let map = init_params(&Self::layout("", channels), rng);
        let mut get = map_lookup(&map);
        let out = Self::gather("", &mut get).expect("layout and gather agree");
        out
    }
}

pub fn dcr_forward<'t>(x: Var<'t>, p: &DcrParams<Var<'t>>) -> Result<Var<'t>> {
    let channels = x.shape().get(1).copied().unwrap_or(0);
    let w0 = p.convs[0].weight.shape();
    if w0.len() != 4 || w0[0] != channels || w0[1] != channels {
        return Err(shape_err("dcr_forward", format!("weights for {channels} channels"), format!("{w0:?}")));
    }
    let mut features = vec![x];
    for (conv, slope) in p.convs.iter().zip(&p.slopes) {
        let input = if features.len() == 1 {
            x
        } else {
            Var::concat_channels(&features)?
        };
        let y = input.conv2d(conv.weight, conv.bias)?.prelu(*slope)?;
        features.push(y);
    }
    x.add(*features.last().unwrap())
}
