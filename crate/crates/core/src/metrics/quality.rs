use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB over every element, for images in
/// `[0, 1]`. Identical inputs give `f64::INFINITY`.
pub fn psnr_rgb(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "psnr_rgb")?;
    if a.is_empty() {
        return Err(invalid("psnr_rgb", "empty image"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Local SSIM map of one channel plane, over the valid window positions.
pub fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &k);
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

/// Mean structural similarity: an 11x11 Gaussian window with sigma 1.5 and
/// constants K1 = 0.01, K2 = 0.03 for a data range of 1, evaluated at every
/// valid window position of each channel, then averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    let (batch, c, h, w) = a.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid("ssim", format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let plane = h * w;
    let mut total = 0.0;
    for (pa, pb) in a.data().chunks(plane).zip(b.data().chunks(plane)) {
        let m = ssim_map(pa, pb, h, w);
        total += m.iter().sum::<f64>() / m.len() as f64;
    }
    Ok(total / (batch * c) as f64)
}
