//! Multi-level connection: the input of decoder level `l` gathers every
//! encoder output resampled to level `l`, plus the up-sampled output of the
//! decoder level below. Level 4 has no decoder term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{init_params, join, map_lookup, ConvParams, Lookup, ParamSpec};
use super::sampling::{sampler_layout, Resampler, SamplingKind};
use super::se::{se_forward, SeParams};
use crate::error::{invalid, Result};
use crate::tensor::{ConvSpec, Tensor, Var};

pub const LEVELS: usize = 4;
pub const ENCODER_LEVELS: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Channel attention over the concatenation, then a 1x1 conv.
    #[default]
    Se,
    /// 1x1 conv over the concatenation.
    Concat,
    /// One 1x1 conv per group, summed.
    Add,
    /// Same-level skip only: the encoder output at level `l` and the
    /// up-sampled decoder output. Level 4 takes the deepest encoder output
    /// moved down one level.
    None,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Se => "se",
            FusionMode::Concat => "concat",
            FusionMode::Add => "add",
            FusionMode::None => "none",
        }
    }
}

fn check_level(level: usize) -> Result<()> {
    if !(1..=LEVELS).contains(&level) {
        return Err(invalid("mlc_fuse", format!("level must be 1..=4, got {level}")));
    }
    Ok(())
}

fn moved_channels(c: usize, from: usize, to: usize) -> Result<usize> {
    if to >= from {
        Ok(c * 4usize.pow((to - from) as u32))
    } else {
        let f = 4usize.pow((from - to) as u32);
        if c % f != 0 {
            return Err(invalid(
                "mlc_fuse",
                format!("{c} channels cannot move from level {from} to level {to}"),
            ));
        }
        Ok(c / f)
    }
}

/// A source feature of one group: encoder level `Some(i)` or the previous
/// decoder output (`None`), its width and the levels it moves between.
fn sources(widths: &[usize; LEVELS], level: usize, mode: FusionMode) -> Vec<(Option<usize>, usize, usize)> {
    let mut out = Vec::new();
    if mode == FusionMode::None {
        if level < LEVELS {
            out.push((Some(level), widths[level - 1], level));
        } else {
            out.push((Some(ENCODER_LEVELS), widths[ENCODER_LEVELS - 1], ENCODER_LEVELS));
        }
    } else {
        for i in 1..=ENCODER_LEVELS {
            out.push((Some(i), widths[i - 1], i));
        }
    }
    if level < LEVELS {
        out.push((None, widths[level], level + 1));
    }
    out
}

/// Channel count of every group entering the fusion at `level`, given the
/// stage widths of levels 1 to 4.
pub fn group_channels(widths: &[usize; LEVELS], level: usize, mode: FusionMode) -> Result<Vec<usize>> {
    check_level(level)?;
    sources(widths, level, mode)
        .into_iter()
        .map(|(_, c, from)| moved_channels(c, from, level))
        .collect()
}

fn group_site(prefix: &str, source: Option<usize>) -> String {
    match source {
        Some(i) => join(prefix, &format!("h{i}")),
        None => join(prefix, "up"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlcParams<T> {
    pub se: Option<SeParams<T>>,
    /// A single conv, or one per group in [`FusionMode::Add`].
    pub convs: Vec<ConvParams<T>>,
}

impl<T> MlcParams<T> {
    pub fn layout(
        prefix: &str,
        widths: &[usize; LEVELS],
        level: usize,
        mode: FusionMode,
        reduction: usize,
    ) -> Result<Vec<ParamSpec>> {
        let groups = group_channels(widths, level, mode)?;
        let total: usize = groups.iter().sum();
        let width = widths[level - 1];
        let mut out = Vec::new();
        if mode == FusionMode::Se {
            out.extend(SeParams::<T>::layout(&join(prefix, "se"), total, reduction));
        }
        if mode == FusionMode::Add {
            for (k, &c) in groups.iter().enumerate() {
                ConvParams::<T>::layout(&join(prefix, &format!("conv{k}")), ConvSpec::new(c, width, 1)?, true, &mut out);
            }
        } else {
            ConvParams::<T>::layout(&join(prefix, "conv"), ConvSpec::new(total, width, 1)?, true, &mut out);
        }
        Ok(out)
    }

    /// Weights any learned sampler needs for the resampling inside the fusion.
    pub fn sampler_layout(
        prefix: &str,
        kind: SamplingKind,
        widths: &[usize; LEVELS],
        level: usize,
        mode: FusionMode,
    ) -> Result<Vec<ParamSpec>> {
        check_level(level)?;
        let mut out = Vec::new();
        for (src, c, from) in sources(widths, level, mode) {
            out.extend(sampler_layout(kind, &group_site(prefix, src), c, from, level)?);
        }
        Ok(out)
    }

    pub fn gather(prefix: &str, widths: &[usize; LEVELS], level: usize, mode: FusionMode, get: &mut Lookup<'_, T>) -> Result<Self> {
        let groups = group_channels(widths, level, mode)?;
        let se = if mode == FusionMode::Se {
            Some(SeParams::gather(&join(prefix, "se"), get)?)
        } else {
            None
        };
        let convs = if mode == FusionMode::Add {
            (0..groups.len())
                .map(|k| ConvParams::gather(&join(prefix, &format!("conv{k}")), true, get))
                .collect::<Result<_>>()?
        } else {
            vec![ConvParams::gather(&join(prefix, "conv"), true, get)?]
        };
        Ok(Self { se, convs })
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> MlcParams<U> {
        MlcParams {
            se: self.se.as_ref().map(|s| s.map(f)),
            convs: self.convs.iter().map(|c| c.map(f)).collect(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        if let Some(se) = &self.se {
            se.visit(f);
        }
        for c in &self.convs {
            c.visit(f);
        }
    }
}

impl MlcParams<Tensor> {
    pub fn init(widths: &[usize; LEVELS], level: usize, mode: FusionMode, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        let map = init_params(&Self::layout("", widths, level, mode, reduction)?, rng);
        let mut get = map_lookup(&map);
        let out = Self::gather("", widths, level, mode, &mut get);
        out
    }
}

#[derive(Clone, Debug)]
pub struct MlcOutput<'t> {
    /// The decoder input `D_in^l`.
    pub d_in: Var<'t>,
    /// The resampled features in concatenation order; the decoder term, when
    /// present, is last.
    pub groups: Vec<Var<'t>>,
    /// Channel attention output over the concatenation, in
    /// [`FusionMode::Se`] only.
    pub se_out: Option<Var<'t>>,
}

/// Builds `D_in^l` from the encoder outputs of levels 1 to 3 and, below
/// level 4, the decoder output of level `l + 1`. `site` prefixes the names
/// a learned sampler looks up.
#[allow(clippy::too_many_arguments)]
pub fn mlc_fuse<'t>(
    encoder: &[Var<'t>; ENCODER_LEVELS],
    prev_decoder: Option<Var<'t>>,
    level: usize,
    mode: FusionMode,
    params: &MlcParams<Var<'t>>,
    sampler: &dyn Resampler<'t>,
    site: &str,
) -> Result<MlcOutput<'t>> {
    check_level(level)?;
    if (level < LEVELS) != prev_decoder.is_some() {
        return Err(invalid(
            "mlc_fuse",
            format!("level {level} {} a decoder input", if level < LEVELS { "needs" } else { "takes no" }),
        ));
    }
    let mut groups = Vec::new();
    let own: Vec<usize> = if mode == FusionMode::None {
        vec![level.min(ENCODER_LEVELS)]
    } else {
        (1..=ENCODER_LEVELS).collect()
    };
    for i in own {
        groups.push(sampler.resample(encoder[i - 1], i, level, &group_site(site, Some(i)))?);
    }
    if let Some(d) = prev_decoder {
        groups.push(sampler.resample(d, level + 1, level, &group_site(site, None))?);
    }

    let (d_in, se_out) = match mode {
        FusionMode::Add => {
            if params.convs.len() != groups.len() {
                return Err(invalid("mlc_fuse", format!("{} convs for {} groups", params.convs.len(), groups.len())));
            }
            let mut acc: Option<Var<'t>> = None;
            for (g, c) in groups.iter().zip(&params.convs) {
                let y = g.conv2d(c.weight, c.bias)?;
                acc = Some(match acc {
                    Some(a) => a.add(y)?,
                    None => y,
                });
            }
            (acc.expect("at least one group"), None)
        }
        _ => {
            let conv = params
                .convs
                .first()
                .ok_or_else(|| invalid("mlc_fuse", "missing fusion conv"))?;
            let cat = if groups.len() == 1 { groups[0] } else { Var::concat_channels(&groups)? };
            let (feat, se_out) = match (mode, &params.se) {
                (FusionMode::Se, Some(se)) => {
                    let s = se_forward(cat, se)?;
                    (s, Some(s))
                }
                (FusionMode::Se, None) => return Err(invalid("mlc_fuse", "se fusion without SE parameters")),
                _ => (cat, None),
            };
            (feat.conv2d(conv.weight, conv.bias)?, se_out)
        }
    };
    Ok(MlcOutput { d_in, groups, se_out })
}
