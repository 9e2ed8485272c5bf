//! Network building blocks: the densely connected residual block, channel
//! attention, the wide regional non-local block and multi-level fusion.
//!
//! Every block's parameters are a small generic struct `XParams<T>`. With
//! `T = Tensor` it holds values; mapping it onto a [`Tape`](crate::Tape)
//! with `T = Var` yields the differentiable form the forward functions take.

mod dcr;
mod mlc;
mod params;
mod sampling;
mod se;
mod wrnl;

pub use dcr::{dcr_forward, DcrParams, DCR_LAYERS};
pub use mlc::{group_channels, mlc_fuse, FusionMode, MlcOutput, MlcParams};
pub use params::{init_params, map_lookup, ConvParams, Init, LinearParams, Lookup, ParamSpec, PRELU_SLOPE, RESIDUAL_GAIN};
pub use sampling::{sampler_layout, HaarSampler, Resampler, Sampler, SamplingKind};
pub use se::{se_forward, se_gates, se_hidden, SeParams, SE_MIN_HIDDEN, SE_REDUCTION};
pub use wrnl::{wrnl_forward, wrnl_traced, WrnlParams, WrnlTrace};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Shape class of the patches produced by a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionClass {
    Wide,
    Square,
    Tall,
}

impl RegionClass {
    pub fn name(self) -> &'static str {
        match self {
            RegionClass::Wide => "wide",
            RegionClass::Square => "square",
            RegionClass::Tall => "tall",
        }
    }
}

/// Partition of a feature map into `a` rows by `b` columns of patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a: usize,
    pub b: usize,
}

impl GridSpec {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == 0 || b == 0 {
            return Err(invalid("GridSpec", format!("patch counts must be positive, got {a}x{b}")));
        }
        Ok(Self { a, b })
    }

    /// Wide patches come from more rows than columns.
    pub fn class(&self) -> RegionClass {
        match self.a.cmp(&self.b) {
            std::cmp::Ordering::Greater => RegionClass::Wide,
            std::cmp::Ordering::Equal => RegionClass::Square,
            std::cmp::Ordering::Less => RegionClass::Tall,
        }
    }

    pub fn patches(&self) -> usize {
        self.a * self.b
    }

    /// Patch height and width for an `h x w` field.
    pub fn patch_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.a == 0 || self.b == 0 || h % self.a != 0 || w % self.b != 0 {
            return Err(invalid(
                "GridSpec",
                format!("{}x{} grid does not divide a {h}x{w} field", self.a, self.b),
            ));
        }
        Ok((h / self.a, w / self.b))
    }

    /// Index of the patch that holds pixel `(y, x)` of an `h x w` field,
    /// numbered row-major.
    pub fn patch_of(&self, y: usize, x: usize, h: usize, w: usize) -> usize {
        (y / (h / self.a)) * self.b + x / (w / self.b)
    }
}
