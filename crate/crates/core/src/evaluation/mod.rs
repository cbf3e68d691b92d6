//! Image quality metrics, dataset evaluation and ablation sweeps.

mod ablation;
mod metrics;
mod report;

pub use ablation::{
    ablation_sweep, lookup_variant, resolve_grid, AblationRow, AblationTable, TrendCheck, Variant, GRIDS, VARIANTS,
};
pub use metrics::{psnr, psnr_with, ssim, LUMA, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    evaluate, evaluate_samples, format_summary, score_sample, EvalReport, Identity, ImageScore, Restorer,
};
