//! Two-dimensional Haar analysis and synthesis.
//!
//! [`dwt_haar`] halves the spatial extent and quadruples the channel count;
//! [`iwt_haar`] is its exact inverse. Output channels are grouped by subband:
//! for an input with `C` channels, channels `0..C` hold LL, `C..2C` LH,
//! `2C..3C` HL and `3C..4C` HH. The LL band is exactly 2x2 mean pooling.

use crate::error::{invalid, Result};
use crate::tensor::{Tensor, Var};

/// The four 2x2 analysis filters, indexed `[row][col]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarFilters {
    pub ll: [[f64; 2]; 2],
    pub lh: [[f64; 2]; 2],
    pub hl: [[f64; 2]; 2],
    pub hh: [[f64; 2]; 2],
}

pub const HAAR: HaarFilters = HaarFilters {
    ll: [[0.25, 0.25], [0.25, 0.25]],
    lh: [[-0.25, -0.25], [0.25, 0.25]],
    hl: [[-0.25, 0.25], [-0.25, 0.25]],
    hh: [[0.25, -0.25], [-0.25, 0.25]],
};

impl HaarFilters {
    /// Filters in subband order LL, LH, HL, HH.
    pub fn bands(&self) -> [[[f64; 2]; 2]; 4] {
        [self.ll, self.lh, self.hl, self.hh]
    }
}

/// Forward transform of one 2x2 block `[a b; c d]`.
#[inline]
fn analyze(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        0.25 * (a + b + c + d),
        0.25 * (-a - b + c + d),
        0.25 * (-a + b - c + d),
        0.25 * (a - b - c + d),
    ]
}

/// Inverse of [`analyze`].
#[inline]
fn synthesize(ll: f64, lh: f64, hl: f64, hh: f64) -> [f64; 4] {
    [ll - lh - hl + hh, ll - lh + hl - hh, ll + lh - hl - hh, ll + lh + hl + hh]
}

/// Applies a per-block map from a `[B, C, H, W]` layout to the grouped
/// `[B, 4C, H/2, W/2]` layout.
fn to_bands(x: &Tensor, f: impl Fn(f64, f64, f64, f64) -> [f64; 4]) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid("dwt_haar", format!("spatial extent {h}x{w} is not even")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, 4 * c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let plane = &src[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for y in 0..ho {
                for xx in 0..wo {
                    let top = 2 * y * w + 2 * xx;
                    let bot = top + w;
                    let v = f(plane[top], plane[top + 1], plane[bot], plane[bot + 1]);
                    for (q, vq) in v.into_iter().enumerate() {
                        dst[((bi * 4 * c + q * c + ci) * ho + y) * wo + xx] = vq;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Applies a per-block map from the grouped band layout back to pixels.
fn from_bands(x: &Tensor, f: impl Fn(f64, f64, f64, f64) -> [f64; 4]) -> Result<Tensor> {
    let (b, c4, h, w) = x.dims4()?;
    if c4 % 4 != 0 {
        return Err(invalid("iwt_haar", format!("channel count {c4} is not divisible by 4")));
    }
    let c = c4 / 4;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let band = |q: usize, y: usize, xx: usize| src[((bi * c4 + q * c + ci) * h + y) * w + xx];
            let plane = &mut dst[(bi * c + ci) * ho * wo..(bi * c + ci + 1) * ho * wo];
            for y in 0..h {
                for xx in 0..w {
                    let [p00, p01, p10, p11] = f(band(0, y, xx), band(1, y, xx), band(2, y, xx), band(3, y, xx));
                    let top = 2 * y * wo + 2 * xx;
                    plane[top] = p00;
                    plane[top + 1] = p01;
                    plane[top + wo] = p10;
                    plane[top + wo + 1] = p11;
                }
            }
        }
    }
    Ok(out)
}

/// Haar analysis: `[B, C, H, W] -> [B, 4C, H/2, W/2]`. Odd extents are
/// rejected.
pub fn dwt_haar(x: &Tensor) -> Result<Tensor> {
    to_bands(x, analyze)
}

/// Haar synthesis: `[B, 4C, H, W] -> [B, C, 2H, 2W]`.
pub fn iwt_haar(x: &Tensor) -> Result<Tensor> {
    from_bands(x, synthesize)
}

/// Moves a feature map `from_level` -> `to_level` by repeated analysis
/// (going down) or synthesis (going up). Equal levels are the identity.
pub fn resample(x: &Tensor, from_level: usize, to_level: usize) -> Result<Tensor> {
    let mut t = x.clone();
    if to_level > from_level {
        for _ in from_level..to_level {
            t = dwt_haar(&t)?;
        }
    } else {
        for _ in to_level..from_level {
            t = iwt_haar(&t)?;
        }
    }
    Ok(t)
}

impl<'t> Var<'t> {
    /// Differentiable [`dwt_haar`].
    pub fn dwt(self) -> Result<Var<'t>> {
        let out = dwt_haar(&self.value())?;
        // The transpose of the analysis map is synthesis scaled by 1/4.
        Ok(self.tape.record(out, &[self], |g| {
            vec![from_bands(g, |ll, lh, hl, hh| synthesize(ll, lh, hl, hh).map(|v| 0.25 * v)).unwrap()]
        }))
    }

    /// Differentiable [`iwt_haar`].
    pub fn iwt(self) -> Result<Var<'t>> {
        let out = iwt_haar(&self.value())?;
        // The transpose of synthesis is analysis scaled by 4.
        Ok(self.tape.record(out, &[self], |g| {
            vec![to_bands(g, |a, b, c, d| analyze(a, b, c, d).map(|v| 4.0 * v)).unwrap()]
        }))
    }

    /// Differentiable [`resample`].
    pub fn resample(self, from_level: usize, to_level: usize) -> Result<Var<'t>> {
        let mut v = self;
        if to_level > from_level {
            for _ in from_level..to_level {
                v = v.dwt()?;
            }
        } else {
            for _ in to_level..from_level {
                v = v.iwt()?;
            }
        }
        Ok(v)
    }
}
