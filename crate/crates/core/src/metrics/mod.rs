//! Full-reference image quality metrics and dataset evaluation.
//!
//! Every metric compares two 8-bit RGB images of equal size. Dataset
//! aggregates are arithmetic means of the per-image values, so PSNR is the
//! mean of per-image PSNRs rather than the PSNR of the mean MSE.

mod eval;
mod lpips;
mod quality;

pub use eval::{
    evaluate_dataset, image_metrics, AggregateMetrics, IdentityTranslator, ImageMetrics, MetricReport,
    Translator, AGGREGATION_NOTE, CSV_COLUMNS,
};
pub use lpips::{weights_path as lpips_weights_path, Lpips, DEFAULT_WEIGHTS_PATH, MIN_INPUT_SIZE as LPIPS_MIN_SIZE, WEIGHTS_ENV};
pub use quality::{
    gaussian_kernel, ms_ssim, mse, psnr, psnr_from_mse, ssim, MS_SSIM_MIN_SIZE, MS_SSIM_WEIGHTS, PSNR_CAP_DB,
    SSIM_SIGMA, SSIM_WINDOW,
};
