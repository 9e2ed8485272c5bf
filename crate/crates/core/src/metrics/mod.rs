//! Image quality metrics, the rain distribution analysis and SE feature
//! importance.

mod importance;
mod quality;
mod rain;

pub use importance::{dispersion, se_importance, write_importance_csv, ImportanceProfile, GROUP_LABELS};
pub use quality::{psnr_rgb, ssim, ssim_map, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use rain::{
    distribution_report, grid_rain_std, rain_mask, DistributionReport, DistributionRow, GridStats, HistogramRow,
    RainMask, CANONICAL_GRIDS, DEFAULT_TAU,
};
