//! Procedural clean images and the parametric night degradation
//! `y = clip(blur(s·x^γ) + n)`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::ImageRGB;
use crate::error::{Error, Result};
use crate::rng;

pub const EXPOSURE_RANGE: (f64, f64) = (0.1, 0.5);
pub const GAMMA_RANGE: (f64, f64) = (1.5, 3.0);
pub const GAUSSIAN_SIGMA_RANGE: (f64, f64) = (1.0, 3.0);
pub const MOTION_LENGTH_RANGE: (f64, f64) = (5.0, 15.0);
pub const NOISE_RANGE: (f64, f64) = (0.005, 0.02);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlurKernel {
    /// Delta kernel. Only reachable through direct construction.
    Identity,
    Gaussian { sigma: f64 },
    /// Line segment of `length` pixels at `angle` radians.
    Motion { length: f64, angle: f64 },
}

/// Square, odd-sized, normalized kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl BlurKernel {
    pub fn materialize(&self) -> Kernel {
        let mut k = match *self {
            BlurKernel::Identity => Kernel {
                size: 1,
                weights: vec![1.0],
            },
            BlurKernel::Gaussian { sigma } => {
                let r = (3.0 * sigma).ceil() as usize;
                let size = 2 * r + 1;
                let mut weights = Vec::with_capacity(size * size);
                for i in 0..size {
                    for j in 0..size {
                        let (dy, dx) = (i as f64 - r as f64, j as f64 - r as f64);
                        weights.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
                    }
                }
                Kernel { size, weights }
            }
            BlurKernel::Motion { length, angle } => motion_kernel(length, angle),
        };
        let total: f64 = k.weights.iter().sum();
        k.weights.iter_mut().for_each(|w| *w /= total);
        k
    }
}

/// Rasterizes a centred segment by bilinear splatting of dense samples.
fn motion_kernel(length: f64, angle: f64) -> Kernel {
    let r = (length / 2.0).ceil() as usize + 1;
    let size = 2 * r + 1;
    let mut weights = vec![0.0; size * size];
    let samples = (length * 8.0).ceil() as usize + 1;
    let (dy, dx) = (angle.sin(), angle.cos());
    for s in 0..samples {
        let t = (s as f64 / (samples - 1) as f64 - 0.5) * (length - 1.0);
        let y = r as f64 + t * dy;
        let x = r as f64 + t * dx;
        let (y0, x0) = (y.floor(), x.floor());
        let (ly, lx) = (y - y0, x - x0);
        for (oy, ox, w) in [
            (0, 0, (1.0 - ly) * (1.0 - lx)),
            (0, 1, (1.0 - ly) * lx),
            (1, 0, ly * (1.0 - lx)),
            (1, 1, ly * lx),
        ] {
            let (yy, xx) = (y0 as usize + oy, x0 as usize + ox);
            if yy < size && xx < size {
                weights[yy * size + xx] += w;
            }
        }
    }
    Kernel { size, weights }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    pub exposure: f64,
    pub gamma: f64,
    pub kernel: BlurKernel,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl DegradationParams {
    /// Validated constructor. Identity kernels are rejected here.
    pub fn new(exposure: f64, gamma: f64, kernel: BlurKernel, noise_sigma: f64, seed: u64) -> Result<Self> {
        check_range("exposure", exposure, EXPOSURE_RANGE)?;
        check_range("gamma", gamma, GAMMA_RANGE)?;
        check_range("noise_sigma", noise_sigma, NOISE_RANGE)?;
        match kernel {
            BlurKernel::Identity => return Err(Error::Config("identity kernel is not a valid degradation".into())),
            BlurKernel::Gaussian { sigma } => check_range("blur sigma", sigma, GAUSSIAN_SIGMA_RANGE)?,
            BlurKernel::Motion { length, angle } => {
                check_range("motion length", length, MOTION_LENGTH_RANGE)?;
                if !angle.is_finite() {
                    return Err(Error::Config("motion angle must be finite".into()));
                }
            }
        }
        Ok(Self {
            exposure,
            gamma,
            kernel,
            noise_sigma,
            seed,
        })
    }

    /// Uniform draw over the valid ranges; Gaussian and motion blur are equally likely.
    pub fn sample(seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let u = |r: &mut rng::Rng, (lo, hi): (f64, f64)| r.random_range(lo..=hi);
        let exposure = u(&mut r, EXPOSURE_RANGE);
        let gamma = u(&mut r, GAMMA_RANGE);
        let kernel = if r.random_bool(0.5) {
            BlurKernel::Gaussian {
                sigma: u(&mut r, GAUSSIAN_SIGMA_RANGE),
            }
        } else {
            BlurKernel::Motion {
                length: u(&mut r, MOTION_LENGTH_RANGE),
                angle: r.random_range(0.0..std::f64::consts::PI),
            }
        };
        let noise_sigma = u(&mut r, NOISE_RANGE);
        Self::new(exposure, gamma, kernel, noise_sigma, rng::child_seed(seed, 1)).expect("sampled params are in range")
    }
}

/// Mirror index without edge repetition, folding as often as needed.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

pub fn degrade(clean: &ImageRGB, params: &DegradationParams) -> ImageRGB {
    let (w, h) = (clean.width, clean.height);
    let dark: Vec<f64> = clean.pixels.iter().map(|&v| params.exposure * v.powf(params.gamma)).collect();
    let k = params.kernel.materialize();
    let r = (k.size / 2) as isize;
    let mut out = ImageRGB::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for ki in 0..k.size {
                let sy = reflect(y as isize + ki as isize - r, h);
                for kj in 0..k.size {
                    let sx = reflect(x as isize + kj as isize - r, w);
                    let wt = k.weights[ki * k.size + kj];
                    let base = (sy * w + sx) * 3;
                    for c in 0..3 {
                        acc[c] += wt * dark[base + c];
                    }
                }
            }
            out.pixels[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).expect("finite noise sigma");
        let mut r = rng::stream(params.seed, 1);
        out.pixels.iter_mut().for_each(|v| *v += normal.sample(&mut r));
    }
    out.clamp();
    out
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn random_color(r: &mut rng::Rng) -> [f64; 3] {
    [r.random_range(0.1..0.9), r.random_range(0.1..0.9), r.random_range(0.1..0.9)]
}

enum Shape {
    Circle { cx: f64, cy: f64, radius: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, rot: f64 },
}

impl Shape {
    /// Signed distance in pixels, negative inside.
    fn sdf(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Circle { cx, cy, radius } => ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - radius,
            Shape::Rect { cx, cy, hw, hh, rot } => {
                let (s, c) = rot.sin_cos();
                let (px, py) = (x - cx, y - cy);
                let (lx, ly) = ((c * px + s * py).abs() - hw, (-s * px + c * py).abs() - hh);
                let outside = (lx.max(0.0).powi(2) + ly.max(0.0).powi(2)).sqrt();
                outside + lx.max(ly).min(0.0)
            }
        }
    }
}

fn generate_one(size: usize, seed: u64) -> ImageRGB {
    let mut r = rng::stream(seed, 0);
    let s = size as f64;
    let (c0, c1) = (random_color(&mut r), random_color(&mut r));
    let theta = r.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (theta.cos(), theta.sin());

    let shapes: Vec<(Shape, [f64; 3], f64)> = (0..r.random_range(2..=5))
        .map(|_| {
            let cx = r.random_range(0.0..s);
            let cy = r.random_range(0.0..s);
            let shape = if r.random_bool(0.5) {
                Shape::Circle {
                    cx,
                    cy,
                    radius: r.random_range(0.08..0.3) * s,
                }
            } else {
                Shape::Rect {
                    cx,
                    cy,
                    hw: r.random_range(0.06..0.25) * s,
                    hh: r.random_range(0.06..0.25) * s,
                    rot: r.random_range(0.0..std::f64::consts::PI),
                }
            };
            (shape, random_color(&mut r), r.random_range(0.6..1.0))
        })
        .collect();

    let waves: Vec<([f64; 3], f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = r.random_range(1.0..6.0) * std::f64::consts::TAU / s;
            let a = r.random_range(0.0..std::f64::consts::TAU);
            let amp = [r.random_range(-0.06..0.06), r.random_range(-0.06..0.06), r.random_range(-0.06..0.06)];
            (amp, f * a.cos(), f * a.sin(), r.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let mut img = ImageRGB::filled(size, size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((fx / s - 0.5) * gx + (fy / s - 0.5) * gy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for (shape, color, opacity) in &shapes {
                let cover = opacity * (1.0 - smoothstep(-0.5, 0.5, shape.sdf(fx, fy)));
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - cover) + color[c] * cover;
                }
            }
            for (amp, kx, ky, phase) in &waves {
                let v = (kx * fx + ky * fy + phase).sin();
                for c in 0..3 {
                    px[c] += amp[c] * v;
                }
            }
            for c in 0..3 {
                img.set(x, y, c, px[c].clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// `count` square images of side `size`, each drawn from its own seed stream.
pub fn generate_clean(count: usize, size: usize, seed: u64) -> Vec<ImageRGB> {
    (0..count).map(|i| generate_one(size.max(1), rng::child_seed(seed, i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(exposure: f64, gamma: f64) -> DegradationParams {
        DegradationParams {
            exposure,
            gamma,
            kernel: BlurKernel::Identity,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn identity_params_leave_image_unchanged() {
        let img = generate_clean(1, 16, 3).pop().unwrap();
        assert_eq!(degrade(&img, &identity(1.0, 1.0)), img);
    }

    #[test]
    fn linear_darkening_of_constant() {
        let out = degrade(&ImageRGB::filled(8, 8, 0.5), &identity(0.2, 1.0));
        assert!(out.pixels.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn kernels_are_normalized() {
        for k in [
            BlurKernel::Gaussian { sigma: 1.0 },
            BlurKernel::Gaussian { sigma: 2.7 },
            BlurKernel::Motion { length: 5.0, angle: 0.3 },
            BlurKernel::Motion { length: 15.0, angle: 2.0 },
        ] {
            let m = k.materialize();
            assert_eq!(m.size % 2, 1);
            assert!((m.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constructor_enforces_ranges() {
        let g = BlurKernel::Gaussian { sigma: 2.0 };
        assert!(DegradationParams::new(0.3, 2.0, g, 0.01, 0).is_ok());
        assert!(DegradationParams::new(0.6, 2.0, g, 0.01, 0).is_err());
        assert!(DegradationParams::new(0.3, 1.0, g, 0.01, 0).is_err());
        assert!(DegradationParams::new(0.3, 2.0, BlurKernel::Gaussian { sigma: 4.0 }, 0.01, 0).is_err());
        assert!(DegradationParams::new(0.3, 2.0, g, 0.1, 0).is_err());
        assert!(DegradationParams::new(0.3, 2.0, BlurKernel::Identity, 0.01, 0).is_err());
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let a = generate_clean(3, 24, 11);
        assert_eq!(a, generate_clean(3, 24, 11));
        assert_ne!(a[0], a[1]);
        assert!(a.iter().flat_map(|i| &i.pixels).all(|&v| (0.0..=1.0).contains(&v)));
    }
}
