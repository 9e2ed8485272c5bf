//! Spatial distribution of rain pixels over grid partitions.

use std::io::Write;

use crate::blocks::{GridSpec, RegionClass};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;
use crate::training::RainPair;

pub const DEFAULT_TAU: f64 = 0.1;

/// The three partitions compared in the distribution analysis.
pub const CANONICAL_GRIDS: [GridSpec; 3] = [GridSpec { a: 16, b: 4 }, GridSpec { a: 8, b: 8 }, GridSpec { a: 4, b: 16 }];

/// Pixels where some colour channel of the rainy image differs from the
/// clean one by more than `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct RainMask {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` entries.
    pub mask: Vec<bool>,
    pub tau: f64,
    pub id: String,
}

impl RainMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Coordinates `(y, x)` of every set pixel in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        (0..self.mask.len())
            .filter(|&i| self.mask[i])
            .map(|i| (i / self.width, i % self.width))
            .collect()
    }
}

/// Thresholds the per-pixel maximum over RGB of `|rainy - clean|`. Both
/// images are `[1, C, H, W]`.
pub fn rain_mask(rainy: &Tensor, clean: &Tensor, tau: f64, id: &str) -> Result<RainMask> {
    rainy.expect_same_shape(clean, "rain_mask")?;
    if !(tau > 0.0) {
        return Err(invalid("rain_mask", format!("threshold must be positive, got {tau}")));
    }
    let (batch, c, h, w) = rainy.dims4()?;
    if batch != 1 {
        return Err(invalid("rain_mask", format!("expected a single image, got batch {batch}")));
    }
    let plane = h * w;
    let mut mask = vec![false; plane];
    for ch in 0..c {
        let (r, k) = (&rainy.data()[ch * plane..][..plane], &clean.data()[ch * plane..][..plane]);
        for ((m, a), b) in mask.iter_mut().zip(r).zip(k) {
            *m |= (a - b).abs() > tau;
        }
    }
    Ok(RainMask {
        height: h,
        width: w,
        mask,
        tau,
        id: id.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridStats {
    pub grid: GridSpec,
    /// Rain pixel count per patch, row-major over the grid.
    pub counts: Vec<usize>,
    /// Population standard deviation of `counts`.
    pub std: f64,
}

/// Counts rain pixels in each patch of `grid`. When the mask does not
/// divide evenly, the trailing rows and columns past the largest divisible
/// extent are ignored.
pub fn grid_rain_std(mask: &RainMask, grid: GridSpec) -> Result<GridStats> {
    if grid.a == 0 || grid.b == 0 {
        return Err(invalid("grid_rain_std", "grid must have positive patch counts"));
    }
    let (h, w) = ((mask.height / grid.a) * grid.a, (mask.width / grid.b) * grid.b);
    if h == 0 || w == 0 {
        return Err(invalid(
            "grid_rain_std",
            format!("{}x{} mask is smaller than the {}x{} grid", mask.height, mask.width, grid.a, grid.b),
        ));
    }
    let mut counts = vec![0usize; grid.patches()];
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                counts[grid.patch_of(y, x, h, w)] += 1;
            }
        }
    }
    Ok(GridStats {
        grid,
        std: population_std(&counts),
        counts,
    })
}

pub(crate) fn population_std(counts: &[usize]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    (counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// One line of `distribution.csv`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DistributionRow {
    pub image_id: String,
    pub grid_class: &'static str,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct HistogramRow {
    pub grid_class: &'static str,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    /// Per image and grid class, in input order then wide, square, tall.
    pub rows: Vec<DistributionRow>,
    /// Mean per-image std for each canonical grid.
    pub means: Vec<(RegionClass, f64)>,
}

impl DistributionReport {
    pub fn mean(&self, class: RegionClass) -> f64 {
        self.means.iter().find(|m| m.0 == class).map_or(f64::NAN, |m| m.1)
    }

    /// `bins` equal-width bins spanning zero to the largest std, per class.
    pub fn histogram(&self, bins: usize) -> Vec<HistogramRow> {
        let bins = bins.max(1);
        let max = self.rows.iter().map(|r| r.std).fold(0.0, f64::max);
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let mut out = Vec::new();
        for (class, _) in &self.means {
            let mut counts = vec![0; bins];
            for r in self.rows.iter().filter(|r| r.grid_class == class.name()) {
                counts[((r.std / width) as usize).min(bins - 1)] += 1;
            }
            for (i, count) in counts.into_iter().enumerate() {
                out.push(HistogramRow {
                    grid_class: class.name(),
                    bin_lo: i as f64 * width,
                    bin_hi: (i + 1) as f64 * width,
                    count,
                });
            }
        }
        out
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_rows(&self.rows, w)
    }

    pub fn write_histogram_csv(&self, bins: usize, w: impl Write) -> Result<()> {
        write_rows(&self.histogram(bins), w)
    }
}

pub(crate) fn write_rows<T: serde::Serialize>(rows: &[T], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-image patch-count std for the wide (16x4), square (8x8) and tall
/// (4x16) grids, and their means over the set.
pub fn distribution_report(pairs: &[RainPair], tau: f64) -> Result<DistributionReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(3 * pairs.len());
    let mut sums = [0.0; 3];
    for pair in pairs {
        let mask = rain_mask(&pair.rainy, &pair.clean, tau, &pair.id)?;
        for (k, grid) in CANONICAL_GRIDS.iter().enumerate() {
            let s = grid_rain_std(&mask, *grid)?.std;
            sums[k] += s;
            rows.push(DistributionRow {
                image_id: pair.id.clone(),
                grid_class: grid.class().name(),
                std: s,
            });
        }
    }
    let n = pairs.len() as f64;
    let means = CANONICAL_GRIDS.iter().zip(sums).map(|(g, s)| (g.class(), s / n)).collect();
    Ok(DistributionReport { rows, means })
}
