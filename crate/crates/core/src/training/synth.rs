//! Synthetic rain: smooth clean backgrounds with additive bright streaks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::RainPair;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Clean backgrounds stay below this so streaks never saturate.
pub const BACKGROUND_MAX: f64 = 0.6;

/// One straight streak. `angle` is in degrees from the positive x axis, so
/// 90 is vertical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Streak {
    pub y: f64,
    pub x: f64,
    pub angle: f64,
    pub length: usize,
    pub width: usize,
    pub intensity: f64,
}

impl Streak {
    /// Pixels covered inside an `h x w` image, sorted row-major, without
    /// duplicates.
    pub fn pixels(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut hit = vec![false; h * w];
        let (s, c) = (self.angle * PI / 180.0).sin_cos();
        // Direction along the streak is (dy, dx) = (s, c); across is (-c, s).
        let steps = 4 * self.length.saturating_sub(1);
        for i in 0..=steps {
            let t = i as f64 / 4.0;
            for k in 0..self.width {
                let y = (self.y + t * s - k as f64 * c).round();
                let x = (self.x + t * c + k as f64 * s).round();
                if y >= 0.0 && x >= 0.0 && (y as usize) < h && (x as usize) < w {
                    hit[y as usize * w + x as usize] = true;
                }
            }
        }
        (0..h * w).filter(|&i| hit[i]).map(|i| (i / w, i % w)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub streaks: usize,
    /// Inclusive range of streak lengths in pixels.
    pub length: (usize, usize),
    pub width: usize,
    /// Maximum deviation from the streak direction, in degrees (at most 10).
    pub angle_jitter: f64,
    /// Range of the brightness added to every colour channel.
    pub intensity: (f64, f64),
    /// Rotate the streaks by 90 degrees.
    pub horizontal: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            streaks: 24,
            length: (8, 24),
            width: 1,
            angle_jitter: 10.0,
            intensity: (0.25, 0.45),
            horizontal: false,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length;
        if lo == 0 || hi < lo {
            return Err(invalid("synth_rain", format!("streak length range {lo}..={hi} is degenerate")));
        }
        if self.width == 0 {
            return Err(invalid("synth_rain", "streak width must be positive"));
        }
        if !(0.0..=10.0).contains(&self.angle_jitter) {
            return Err(invalid("synth_rain", format!("angle jitter {} outside 0..=10 degrees", self.angle_jitter)));
        }
        let (a, b) = self.intensity;
        if !(a > 0.0 && b >= a) {
            return Err(invalid("synth_rain", format!("intensity range {a}..{b} must be positive and ordered")));
        }
        Ok(())
    }
}

/// A rainy pair and the exact set of pixels the streaks touched.
#[derive(Clone, Debug)]
pub struct SynthRain {
    pub pair: RainPair,
    /// Sorted row-major.
    pub touched: Vec<(usize, usize)>,
}

/// A smooth random `[1, 3, h, w]` image with values in `[0.05, 0.55]`.
pub fn background(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensor::zeros(&[1, 3, h, w]);
    for ch in 0..3 {
        let base = rng.gen_range(0.2..0.4);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let fy = rng.gen_range(0.5..3.0) * 2.0 * PI / h as f64;
                let fx = rng.gen_range(0.5..3.0) * 2.0 * PI / w as f64;
                (fy, fx, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..0.05))
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let v: f64 = base
                    + waves
                        .iter()
                        .map(|&(fy, fx, ph, amp)| amp * (fy * y as f64 + fx * x as f64 + ph).sin())
                        .sum::<f64>();
                *out.at4_mut(0, ch, y, x) = v.clamp(0.05, 0.55);
            }
        }
    }
    out
}

/// Adds `streaks` to `clean` (every channel, clamped to 1).
pub fn apply_streaks(clean: &Tensor, streaks: &[Streak], id: &str) -> Result<SynthRain> {
    let (_, c, h, w) = clean.dims4()?;
    let mut rainy = clean.clone();
    let mut hit = vec![false; h * w];
    for s in streaks {
        for (y, x) in s.pixels(h, w) {
            hit[y * w + x] = true;
            for ch in 0..c {
                *rainy.at4_mut(0, ch, y, x) += s.intensity;
            }
        }
    }
    let touched = (0..h * w).filter(|&i| hit[i]).map(|i| (i / w, i % w)).collect();
    Ok(SynthRain {
        pair: RainPair::new(rainy, clean.clone(), id)?,
        touched,
    })
}

/// Random streaks drawn from `params`.
pub fn random_streaks(h: usize, w: usize, seed: u64, params: &SynthParams) -> Result<Vec<Streak>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = if params.horizontal { 0.0 } else { 90.0 };
    Ok((0..params.streaks)
        .map(|_| {
            let jitter = if params.angle_jitter > 0.0 {
                rng.gen_range(-params.angle_jitter..=params.angle_jitter)
            } else {
                0.0
            };
            Streak {
                y: rng.gen_range(0.0..h as f64),
                x: rng.gen_range(0.0..w as f64),
                angle: axis + jitter,
                length: rng.gen_range(params.length.0..=params.length.1),
                width: params.width,
                intensity: rng.gen_range(params.intensity.0..=params.intensity.1),
            }
        })
        .collect())
}

/// Overlays random streaks on `clean`; deterministic in `seed`.
pub fn synth_rain(clean: &Tensor, seed: u64, params: &SynthParams, id: &str) -> Result<SynthRain> {
    let (_, _, h, w) = clean.dims4()?;
    apply_streaks(clean, &random_streaks(h, w, seed, params)?, id)
}

/// `n` pairs of `size x size` images with ids `synth_0000`, ... Each pair
/// has its own seed, so the result does not depend on the thread count.
pub fn synth_dataset(n: usize, size: usize, seed: u64, params: &SynthParams) -> Result<Vec<RainPair>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            let clean = background(size, size, s);
            Ok(synth_rain(&clean, s ^ 0xA5A5, params, &format!("synth_{i:04}"))?.pair)
        })
        .collect()
}
