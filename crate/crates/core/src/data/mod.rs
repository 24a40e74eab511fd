//! Synthetic paired data, PPM I/O and distortion metrics.

mod image;
pub mod manifest;
pub mod metrics;
pub mod ppm;
pub use ppm::{load_ppm, save_ppm};
pub mod synth;

pub use image::ImageRGB;
pub use metrics::{psnr, ssim, PSNR_CAP};
pub use synth::{degrade, generate_clean, BlurKernel, DegradationParams};

/// A degraded image and its clean target.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub degraded: ImageRGB,
    pub clean: ImageRGB,
}
