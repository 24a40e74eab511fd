//! PSNR and luma SSIM.

use super::ImageRGB;
use crate::error::{Error, Result};

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same(op: &'static str, a: &ImageRGB, b: &ImageRGB) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::dim(
            op,
            "spatial",
            format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height),
        ))
    }
}

/// Neumaier-compensated sum, so means of many equal terms stay exact.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

pub fn mse(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    check_same("mse", a, b)?;
    let sum = compensated_sum(a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)));
    Ok(sum / a.pixels.len() as f64)
}

pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

fn luma(img: &ImageRGB) -> Vec<f64> {
    img.pixels
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Weighted moments are accumulated over symmetric pairs so that
/// `ssim(a, b)` and `ssim(b, a)` execute identical float operations.
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    check_same("ssim", a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::dim(
            "ssim",
            "spatial",
            format!("{}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", a.width, a.height),
        ));
    }
    let (ya, yb) = (luma(a), luma(b));
    let g = gaussian_window();
    let w = a.width;
    let (ny, nx) = (a.height - SSIM_WINDOW + 1, a.width - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = g[i] * g[j];
                    let p = (oy + i) * w + ox + j;
                    let (u, v) = (ya[p], yb[p]);
                    ma += wt * u;
                    mb += wt * v;
                    saa += wt * u * u;
                    sbb += wt * v * v;
                    sab += wt * u * v;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (nx * ny) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_tenth_error_is_twenty_db() {
        for side in [1, 16, 64] {
            let p = psnr(&ImageRGB::filled(side, side, 0.5), &ImageRGB::filled(side, side, 0.4)).unwrap();
            assert_eq!(p, 20.0);
        }
    }

    #[test]
    fn identical_images_hit_cap() {
        let a = ImageRGB::filled(12, 12, 0.4);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn window_normalized() {
        assert!((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_images_rejected_by_ssim() {
        let a = ImageRGB::filled(10, 20, 0.4);
        assert!(ssim(&a, &a).is_err());
        assert!(psnr(&a, &ImageRGB::filled(20, 10, 0.4)).is_err());
    }
}
