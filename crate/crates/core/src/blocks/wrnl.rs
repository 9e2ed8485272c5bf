//! Wide regional non-local block.
//!
//! The feature map is cut into an `a x b` grid of patches and embedded
//! Gaussian attention runs independently inside every patch:
//! `z_i = sum_j softmax_j(theta(x_i) . psi(x_j)) g(x_j)`. A 1x1 projection of
//! `z` is added back to the input when the residual is on.

use std::rc::Rc;

use rand::Rng;

use super::params::{init_params, join, map_lookup, ConvParams, Init, Lookup, ParamSpec, RESIDUAL_GAIN};
use super::GridSpec;
use crate::error::{invalid, Result};
use crate::tensor::{ConvSpec, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct WrnlParams<T> {
    /// `[C, C/2]` query embedding.
    pub theta: T,
    /// `[C, C/2]` key embedding.
    pub psi: T,
    /// `[C, C]` value embedding.
    pub g: T,
    pub out: ConvParams<T>,
}

impl<T> WrnlParams<T> {
    pub fn layout(prefix: &str, channels: usize) -> Result<Vec<ParamSpec>> {
        if channels < 2 || channels % 2 != 0 {
            return Err(invalid("WrnlParams", format!("channel count must be even, got {channels}")));
        }
        let l = channels / 2;
        let emb = |name: &str, cols: usize| {
            ParamSpec::new(
                join(prefix, name),
                &[channels, cols],
                Init::Glorot {
                    fan_in: channels,
                    fan_out: cols,
                    gain: 1.0,
                },
            )
        };
        let mut out = vec![emb("theta", l), emb("psi", l), emb("g", channels)];
        ConvParams::<T>::layout(&join(prefix, "out"), ConvSpec::new(channels, channels, 1)?, true, &mut out);
        out[3] = out[3].clone().with_gain(RESIDUAL_GAIN);
        Ok(out)
    }

    pub fn gather(prefix: &str, get: &mut Lookup<'_, T>) -> Result<Self> {
        Ok(Self {
            theta: get(&join(prefix, "theta"))?,
            psi: get(&join(prefix, "psi"))?,
            g: get(&join(prefix, "g"))?,
            out: ConvParams::gather(&join(prefix, "out"), true, get)?,
        })
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> WrnlParams<U> {
        WrnlParams {
            theta: f(&self.theta),
            psi: f(&self.psi),
            g: f(&self.g),
            out: self.out.map(f),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        f(&self.theta);
        f(&self.psi);
        f(&self.g);
        self.out.visit(f);
    }
}

impl WrnlParams<Tensor> {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let map = init_params(&Self::layout("", channels)?, rng);
        let mut get = map_lookup(&map);
        let out = Self::gather("", &mut get);
        out
    }
}

/// Intermediate values of one WRNL application.
#[derive(Clone, Copy, Debug)]
pub struct WrnlTrace<'t> {
    /// `[B * a * b, n, n]` attention weights; rows are queries.
    pub attention: Var<'t>,
    /// Non-local response `z` in `[B, C, H, W]`, before the projection.
    pub nonlocal: Var<'t>,
    pub output: Var<'t>,
}

/// Index maps between `[B, C, H, W]` and patch rows `[B * a * b, n, C]`,
/// ordered by batch, then patch (row-major), then position (row-major).
fn patch_indices(shape: (usize, usize, usize, usize), grid: GridSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let (batch, c, h, w) = shape;
    let (ph, pw) = grid.patch_size(h, w)?;
    let n = ph * pw;
    let mut to_rows = vec![0; batch * c * h * w];
    let mut from_rows = vec![0; batch * c * h * w];
    for bi in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let k = grid.patch_of(y, x, h, w);
                let i = (y % ph) * pw + x % pw;
                let row = (bi * grid.patches() + k) * n + i;
                for ch in 0..c {
                    let src = ((bi * c + ch) * h + y) * w + x;
                    let dst = row * c + ch;
                    to_rows[dst] = src;
                    from_rows[src] = dst;
                }
            }
        }
    }
    Ok((to_rows, from_rows))
}

pub fn wrnl_traced<'t>(x: Var<'t>, grid: GridSpec, p: &WrnlParams<Var<'t>>, residual: bool) -> Result<WrnlTrace<'t>> {
    let shape = x.shape();
    let &[batch, c, h, w] = shape.as_slice() else {
        return Err(invalid("wrnl_forward", format!("expected rank 4 input, got {shape:?}")));
    };
    if c % 2 != 0 {
        return Err(invalid("wrnl_forward", format!("channel count must be even, got {c}")));
    }
    let (ph, pw) = grid.patch_size(h, w)?;
    let n = ph * pw;
    let groups = batch * grid.patches();
    let (to_rows, from_rows) = patch_indices((batch, c, h, w), grid)?;

    let rows = x.gather(&[groups * n, c], Rc::new(to_rows))?;
    let l = c / 2;
    let theta = rows.matmul(p.theta)?.reshape(&[groups, n, l])?;
    let psi = rows.matmul(p.psi)?.reshape(&[groups, n, l])?;
    let g = rows.matmul(p.g)?.reshape(&[groups, n, c])?;
    let attention = theta.bmm(psi, true)?.softmax_rows();
    let z = attention.bmm(g, false)?;
    let nonlocal = z.gather(&[batch, c, h, w], Rc::new(from_rows))?;
    let proj = nonlocal.conv2d(p.out.weight, p.out.bias)?;
    let output = if residual { x.add(proj)? } else { proj };
    Ok(WrnlTrace {
        attention,
        nonlocal,
        output,
    })
}

pub fn wrnl_forward<'t>(x: Var<'t>, grid: GridSpec, p: &WrnlParams<Var<'t>>, residual: bool) -> Result<Var<'t>> {
    Ok(wrnl_traced(x, grid, p, residual)?.output)
}
