//! Whole-image inference and evaluation.

use super::{Vqcnir, Vqgan};
use crate::data::{psnr, ssim, ImageRGB, Pair};
use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Reflect-pads right and bottom up to a multiple of `m`.
fn pad_to(img: &ImageRGB, m: usize) -> ImageRGB {
    let w = img.width.div_ceil(m) * m;
    let h = img.height.div_ceil(m) * m;
    if (w, h) == (img.width, img.height) {
        return img.clone();
    }
    let fold = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let p = 2 * (n - 1);
        let r = i % p;
        if r < n {
            r
        } else {
            p - r
        }
    };
    let mut out = ImageRGB::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.set(x, y, c, img.get(fold(x, img.width), fold(y, img.height), c));
            }
        }
    }
    out
}

fn run(img: &ImageRGB, m: usize, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<ImageRGB> {
    let padded = pad_to(img, m);
    let out = no_grad(|| f(&padded.to_tensor()))?;
    let mut restored = ImageRGB::from_tensor(&out)?.remove(0).crop(0, 0, img.width, img.height);
    restored.clamp();
    Ok(restored)
}

/// Restores one image of any size, clamped to `[0, 1]`.
pub fn restore(model: &Vqcnir, img: &ImageRGB) -> Result<ImageRGB> {
    run(img, model.config.divisor(), |x| Ok(model.forward(x)?.restored))
}

pub fn reconstruct(model: &Vqgan, img: &ImageRGB) -> Result<ImageRGB> {
    run(img, model.config.divisor(), |x| Ok(model.reconstruct(x)?.image))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Degraded-vs-clean PSNR of the same pairs.
    pub input_psnr: f64,
}

/// Mean metrics of `restore(degraded)` against `clean`.
pub fn evaluate(model: &Vqcnir, pairs: &[Pair]) -> Result<EvalReport> {
    let mut acc = (0.0, 0.0, 0.0);
    for p in pairs {
        let out = restore(model, &p.degraded)?;
        acc.0 += psnr(&out, &p.clean)?;
        acc.1 += ssim(&out, &p.clean)?;
        acc.2 += psnr(&p.degraded, &p.clean)?;
    }
    let n = pairs.len().max(1) as f64;
    Ok(EvalReport {
        psnr: acc.0 / n,
        ssim: acc.1 / n,
        input_psnr: acc.2 / n,
    })
}

/// Mean reconstruction PSNR of clean images.
pub fn reconstruction_psnr(model: &Vqgan, images: &[ImageRGB]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        total += psnr(&reconstruct(model, img)?, img)?;
    }
    Ok(total / images.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_reflects() {
        let img = ImageRGB::new(3, 1, vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0]).unwrap();
        let p = pad_to(&img, 4);
        assert_eq!((p.width, p.height), (4, 4));
        assert_eq!(p.get(3, 0, 0), 0.5);
        assert_eq!(p.get(2, 3, 1), 1.0);
    }
}
