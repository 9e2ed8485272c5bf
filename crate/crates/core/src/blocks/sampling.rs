//! Down- and up-sampling operators.
//!
//! Every operator multiplies channels by 4 going down and divides by 4 going
//! up, so all of them are drop-in replacements for the Haar pair.

use std::rc::Rc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{join, ConvParams, ParamSpec};
use crate::error::{invalid, Result};
use crate::tensor::{ConvSpec, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    /// Haar analysis and synthesis.
    #[default]
    Dwt,
    /// 2x2 average pooling tiled over four channel groups; going up, the
    /// mean of the four groups is nearest-neighbour upsampled.
    MeanPool,
    /// Going down, keep the top-left pixel of every 2x2 block and apply a
    /// learned 1x1 conv `C -> 4C`; going up, a learned 1x1 conv `4C -> 4C`
    /// followed by depth-to-space.
    #[serde(rename = "conv1x1_stride2", alias = "conv1x1")]
    Conv1x1,
}

impl SamplingKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplingKind::Dwt => "dwt",
            SamplingKind::MeanPool => "mean_pool",
            SamplingKind::Conv1x1 => "conv1x1_stride2",
        }
    }
}

/// Moves features between pyramid levels. `site` names the call site so
/// learned samplers can find their own weights.
pub trait Resampler<'t> {
    fn down(&self, x: Var<'t>, site: &str) -> Result<Var<'t>>;
    fn up(&self, x: Var<'t>, site: &str) -> Result<Var<'t>>;

    /// Repeated [`down`](Self::down) or [`up`](Self::up); step `k` uses the
    /// site `"{site}.s{k}"`.
    fn resample(&self, x: Var<'t>, from: usize, to: usize, site: &str) -> Result<Var<'t>> {
        let mut v = x;
        for k in 0..from.abs_diff(to) {
            let step = join(site, &format!("s{k}"));
            v = if to > from { self.down(v, &step)? } else { self.up(v, &step)? };
        }
        Ok(v)
    }
}

/// The plain Haar pair with no parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct HaarSampler;

impl<'t> Resampler<'t> for HaarSampler {
    fn down(&self, x: Var<'t>, _site: &str) -> Result<Var<'t>> {
        x.dwt()
    }

    fn up(&self, x: Var<'t>, _site: &str) -> Result<Var<'t>> {
        x.iwt()
    }
}

/// A sampler of any [`SamplingKind`], reading learned weights from `params`.
pub struct Sampler<'a, 't> {
    pub kind: SamplingKind,
    pub params: &'a IndexMap<String, Var<'t>>,
}

impl<'t> Sampler<'_, 't> {
    fn conv(&self, site: &str) -> Result<ConvParams<Var<'t>>> {
        let mut get = |name: &str| {
            self.params
                .get(name)
                .copied()
                .ok_or_else(|| invalid("sampler", format!("missing parameter `{name}`")))
        };
        ConvParams::gather(site, true, &mut get)
    }
}

fn channels_of(x: &Var<'_>) -> Result<(usize, usize, usize, usize)> {
    match x.shape()[..] {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(invalid("sampler", format!("expected rank 4 input, got {s:?}"))),
    }
}

fn group_split(c: usize) -> Result<usize> {
    if c % 4 != 0 {
        return Err(invalid("sampler", format!("up-sampling needs channels divisible by 4, got {c}")));
    }
    Ok(c / 4)
}

/// Top-left pixel of each 2x2 block.
fn stride2_pick<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let (b, c, h, w) = channels_of(&x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid("sampler", format!("odd spatial extent {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let idx = (0..b * c * ho * wo)
        .map(|i| {
            let (plane, r) = (i / (ho * wo), i % (ho * wo));
            plane * h * w + (2 * (r / wo)) * w + 2 * (r % wo)
        })
        .collect();
    x.gather(&[b, c, ho, wo], Rc::new(idx))
}

/// `[B, 4C, H, W] -> [B, C, 2H, 2W]`; channel group `q` fills offset
/// `(q / 2, q % 2)` of every 2x2 block.
fn depth_to_space<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let (b, c4, h, w) = channels_of(&x)?;
    let c = group_split(c4)?;
    let (ho, wo) = (2 * h, 2 * w);
    let idx = (0..b * c * ho * wo)
        .map(|i| {
            let (bi, r) = (i / (c * ho * wo), i % (c * ho * wo));
            let (ch, r) = (r / (ho * wo), r % (ho * wo));
            let (y, xx) = (r / wo, r % wo);
            let q = (y % 2) * 2 + xx % 2;
            ((bi * c4 + q * c + ch) * h + y / 2) * w + xx / 2
        })
        .collect();
    x.gather(&[b, c, ho, wo], Rc::new(idx))
}

impl<'t> Resampler<'t> for Sampler<'_, 't> {
    fn down(&self, x: Var<'t>, site: &str) -> Result<Var<'t>> {
        match self.kind {
            SamplingKind::Dwt => x.dwt(),
            SamplingKind::MeanPool => {
                let (_, c, _, _) = channels_of(&x)?;
                // The LL band is exactly the 2x2 mean.
                let pooled = x.dwt()?.slice_channels(0, c)?;
                Var::concat_channels(&[pooled, pooled, pooled, pooled])
            }
            SamplingKind::Conv1x1 => {
                let p = self.conv(site)?;
                stride2_pick(x)?.conv2d(p.weight, p.bias)
            }
        }
    }

    fn up(&self, x: Var<'t>, site: &str) -> Result<Var<'t>> {
        match self.kind {
            SamplingKind::Dwt => x.iwt(),
            SamplingKind::MeanPool => {
                let (b, c4, h, w) = channels_of(&x)?;
                let c = group_split(c4)?;
                let mut mean = x.slice_channels(0, c)?;
                for q in 1..4 {
                    mean = mean.add(x.slice_channels(q * c, c)?)?;
                }
                let mean = mean.mul_scalar(0.25);
                // Synthesis from a lone LL band repeats it over each 2x2 block.
                let zeros = x.tape().constant(&[b, 3 * c, h, w], 0.0);
                Var::concat_channels(&[mean, zeros])?.iwt()
            }
            SamplingKind::Conv1x1 => {
                let p = self.conv(site)?;
                depth_to_space(x.conv2d(p.weight, p.bias)?)
            }
        }
    }
}

/// Parameters a sampler of `kind` needs to move `channels` channels from
/// level `from` to level `to` at `site`.
pub fn sampler_layout(kind: SamplingKind, site: &str, channels: usize, from: usize, to: usize) -> Result<Vec<ParamSpec>> {
    let mut out = Vec::new();
    let mut c = channels;
    for k in 0..from.abs_diff(to) {
        let (cin, cout, next) = if to > from {
            (c, 4 * c, 4 * c)
        } else {
            let q = group_split(c)?;
            (c, c, q)
        };
        if kind == SamplingKind::Conv1x1 {
            let step = join(site, &format!("s{k}"));
            ConvParams::<()>::layout(&step, ConvSpec::new(cin, cout, 1)?, true, &mut out);
        }
        c = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::params::{init_params, Init};
    use crate::tensor::{check_gradients, GradCheckOptions, Tape, Tensor};
    use crate::wavelet::resample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn haar_sampler_matches_wavelet_resample() {
        let x = Tensor::uniform(&[1, 2, 8, 8], -1.0, 1.0, &mut rng());
        let tape = Tape::new();
        let v = HaarSampler.resample(tape.leaf(x.clone()), 1, 3, "a").unwrap();
        assert_eq!(*v.value(), resample(&x, 1, 3).unwrap());
        let params = IndexMap::new();
        let s = Sampler {
            kind: SamplingKind::Dwt,
            params: &params,
        };
        let back = s.resample(v, 3, 1, "b").unwrap();
        assert!(back.value().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn mean_pool_pair() {
        let x = Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng());
        let tape = Tape::new();
        let params = IndexMap::new();
        let s = Sampler {
            kind: SamplingKind::MeanPool,
            params: &params,
        };
        let d = s.down(tape.leaf(x.clone()), "d").unwrap();
        let dv = d.value();
        assert_eq!(dv.shape(), &[1, 8, 2, 2]);
        let want = (x.at4(0, 1, 2, 0) + x.at4(0, 1, 2, 1) + x.at4(0, 1, 3, 0) + x.at4(0, 1, 3, 1)) / 4.0;
        for q in 0..4 {
            assert!((dv.at4(0, 2 * q + 1, 1, 0) - want).abs() < 1e-15);
        }
        // Up of a tiled map returns its nearest-neighbour enlargement.
        let u = s.up(d, "u").unwrap().value();
        assert_eq!(u.shape(), x.shape());
        for (y, xx) in [(2, 0), (2, 1), (3, 0), (3, 1)] {
            assert!((u.at4(0, 1, y, xx) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn conv1x1_pair_shapes_and_layout() {
        let mut r = rng();
        let mut specs = sampler_layout(SamplingKind::Conv1x1, "d", 2, 1, 3).unwrap();
        assert_eq!(specs.iter().map(|s| s.shape.clone()).collect::<Vec<_>>()[0], vec![8, 2, 1, 1]);
        assert_eq!(specs[2].shape, vec![32, 8, 1, 1]);
        specs.extend(sampler_layout(SamplingKind::Conv1x1, "u", 32, 3, 1).unwrap());
        assert_eq!(specs[6].shape, vec![8, 8, 1, 1]);
        assert!(sampler_layout(SamplingKind::Dwt, "d", 2, 1, 3).unwrap().is_empty());
        assert!(sampler_layout(SamplingKind::MeanPool, "u", 6, 2, 1).is_err());

        let values = init_params(&specs, &mut r);
        let tape = Tape::new();
        let vars: IndexMap<String, Var<'_>> = values.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        let s = Sampler {
            kind: SamplingKind::Conv1x1,
            params: &vars,
        };
        let x = tape.leaf(Tensor::uniform(&[1, 2, 8, 8], -1.0, 1.0, &mut r));
        let d = s.resample(x, 1, 3, "d").unwrap();
        assert_eq!(d.shape(), vec![1, 32, 2, 2]);
        assert_eq!(s.resample(d, 3, 1, "u").unwrap().shape(), vec![1, 2, 8, 8]);
        assert!(s.down(x, "missing").is_err());
    }

    #[test]
    fn depth_to_space_places_groups() {
        let x = Tensor::from_fn(&[1, 4, 1, 1], |i| i as f64);
        let tape = Tape::new();
        let y = depth_to_space(tape.leaf(x)).unwrap().value();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
        let p = stride2_pick(tape.leaf(Tensor::from_fn(&[1, 1, 2, 4], |i| i as f64))).unwrap().value();
        assert_eq!(p.data(), &[0.0, 2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng();
        let x = Tensor::uniform(&[1, 4, 4, 4], -1.0, 1.0, &mut r);
        let proj_d = Tensor::uniform(&[1, 16, 2, 2], -1.0, 1.0, &mut r);
        let proj_u = Tensor::uniform(&[1, 1, 8, 8], -1.0, 1.0, &mut r);
        let mut specs = sampler_layout(SamplingKind::Conv1x1, "d", 4, 1, 2).unwrap();
        specs.extend(sampler_layout(SamplingKind::Conv1x1, "u", 4, 2, 1).unwrap());
        assert!(specs.iter().all(|s| matches!(s.init, Init::Glorot { .. } | Init::Const(_))));
        let values = init_params(&specs, &mut r);
        let names: Vec<String> = values.keys().cloned().collect();
        let mut inputs = vec![x];
        inputs.extend(values.values().cloned());
        for kind in [SamplingKind::Dwt, SamplingKind::MeanPool, SamplingKind::Conv1x1] {
            let rep = check_gradients(
                |_, v| {
                    let params: IndexMap<String, Var<'_>> = names.iter().cloned().zip(v[1..].iter().copied()).collect();
                    let s = Sampler { kind, params: &params };
                    let a = s.down(v[0], "d.s0")?.dot_const(&proj_d)?;
                    let b = s.up(v[0], "u.s0")?.dot_const(&proj_u)?;
                    a.add(b)
                },
                &inputs,
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(rep.passed, "{kind:?} {rep:?}");
        }
    }
}
