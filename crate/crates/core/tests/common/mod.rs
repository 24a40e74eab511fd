//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng as _;
use vqcnir::rng;
use vqcnir::Tensor;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, 77);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| r.random_range(lo..hi)).collect(), shape).unwrap()
}

/// Direct-loop stride-1 cross-correlation with zero padding `pad`.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, pad: usize) -> Vec<f64> {
    let (s, ws) = (x.shape(), w.shape());
    let (b, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let (co, kh, kw) = (ws[0], ws[2], ws[3]);
    let (oh, ow) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; b * co * oh * ow];
    for bi in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (sy, sx) = (y as isize + i as isize - pad as isize, xx as isize + j as isize - pad as isize);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += wdat[((o * c + ci) * kh + i) * kw + j]
                                    * xd[((bi * c + ci) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[((bi * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

/// Exhaustive nearest neighbour; strict `<` keeps the lowest index on ties.
pub fn brute_force_nearest(entries: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in entries.iter().enumerate() {
        let d: f64 = e.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// `x ← x + a·x·(1 − x)` applied once per map value.
pub fn scalar_curve(x: f64, maps: &[f64]) -> f64 {
    maps.iter().fold(x, |c, a| c + a * c * (1.0 - c))
}
