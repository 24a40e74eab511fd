//! Deformable convolution (offsets only, no modulation mask).
//!
//! Tap `t = ki·kw + kj` of output pixel `(y, x)` samples the input at
//! `(y + ki − pad + Δy, x + kj − pad + Δx)` where `Δy = offset[2t]` and
//! `Δx = offset[2t + 1]`. Samples are bilinear; corners outside the image
//! read as zero.

use super::gemm::{gemm, Layout};
use super::{grad_if, Tensor};
use crate::error::{Error, Result};

/// Bilinear footprint of one sampling location.
#[derive(Clone, Copy, Default)]
struct Tap {
    /// Flat plane indices of the four corners, `usize::MAX` when outside.
    idx: [usize; 4],
    ly: f64,
    lx: f64,
}

impl Tap {
    fn weights(&self) -> [f64; 4] {
        let (ly, lx) = (self.ly, self.lx);
        [(1.0 - ly) * (1.0 - lx), (1.0 - ly) * lx, ly * (1.0 - lx), ly * lx]
    }

    fn corners(&self, plane: &[f64]) -> [f64; 4] {
        self.idx.map(|i| if i == usize::MAX { 0.0 } else { plane[i] })
    }

    fn sample(&self, plane: &[f64]) -> f64 {
        let v = self.corners(plane);
        let w = self.weights();
        w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]
    }
}

struct DeformGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl DeformGeom {
    fn kk(&self) -> usize {
        self.kh * self.kw
    }

    /// Sampling taps for one batch element, laid out `[kk, h·w]`.
    fn taps(&self, offset: &[f64]) -> Vec<Tap> {
        let (h, w) = (self.h, self.w);
        let hw = h * w;
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let mut taps = vec![Tap::default(); self.kk() * hw];
        for ki in 0..self.kh {
            for kj in 0..self.kw {
                let t = ki * self.kw + kj;
                let dy = &offset[2 * t * hw..(2 * t + 1) * hw];
                let dx = &offset[(2 * t + 1) * hw..(2 * t + 2) * hw];
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let sy = (y + ki) as f64 - ph as f64 + dy[p];
                        let sx = (x + kj) as f64 - pw as f64 + dx[p];
                        let y0 = sy.floor();
                        let x0 = sx.floor();
                        let inside = |yy: f64, xx: f64| {
                            if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
                                yy as usize * w + xx as usize
                            } else {
                                usize::MAX
                            }
                        };
                        taps[t * hw + p] = Tap {
                            idx: [
                                inside(y0, x0),
                                inside(y0, x0 + 1.0),
                                inside(y0 + 1.0, x0),
                                inside(y0 + 1.0, x0 + 1.0),
                            ],
                            ly: sy - y0,
                            lx: sx - x0,
                        };
                    }
                }
            }
        }
        taps
    }

    fn columns(&self, x: &[f64], taps: &[Tap], cols: &mut [f64]) {
        let hw = self.h * self.w;
        let kk = self.kk();
        for ci in 0..self.c {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for t in 0..kk {
                let row = &mut cols[(ci * kk + t) * hw..(ci * kk + t + 1) * hw];
                for (v, tap) in row.iter_mut().zip(&taps[t * hw..(t + 1) * hw]) {
                    *v = tap.sample(plane);
                }
            }
        }
    }
}

impl Tensor {
    /// Same-size deformable convolution with stride 1 and `(k−1)/2` padding.
    ///
    /// `offset` is `[B, 2·kh·kw, H, W]`, `weight` is `[Cout, C, kh, kw]`.
    pub fn deform_conv2d(&self, offset: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4("deform_conv2d")?;
        let [cout, wc, kh, kw] = weight.dims4("deform_conv2d")?;
        if wc != c {
            return Err(Error::dim(
                "deform_conv2d",
                "weight axis 1 (Cin)",
                format!("input has {c} channels, weight expects {wc}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("deform_conv2d needs odd kernels, got {kh}x{kw}")));
        }
        let kk = kh * kw;
        if offset.shape() != [b, 2 * kk, h, w] {
            return Err(Error::dim(
                "deform_conv2d",
                "offset",
                format!("expected [{b}, {}, {h}, {w}], got {:?}", 2 * kk, offset.shape()),
            ));
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return Err(Error::dim("deform_conv2d", "bias", format!("expected [{cout}]")));
            }
        }
        let geom = DeformGeom { c, h, w, kh, kw };
        let hw = h * w;
        let rows = c * kk;

        let mut out = vec![0.0; b * cout * hw];
        {
            let x = self.data();
            let off = offset.data();
            let wt = weight.data();
            let mut cols = vec![0.0; rows * hw];
            for bi in 0..b {
                let taps = geom.taps(&off[bi * 2 * kk * hw..(bi + 1) * 2 * kk * hw]);
                geom.columns(&x[bi * c * hw..(bi + 1) * c * hw], &taps, &mut cols);
                gemm(cout, rows, hw, &wt, Layout::N, &cols, Layout::N, 0.0, &mut out[bi * cout * hw..(bi + 1) * cout * hw]);
            }
            if let Some(bias) = bias {
                let bv = bias.data();
                for bi in 0..b {
                    for co in 0..cout {
                        out[(bi * cout + co) * hw..(bi * cout + co + 1) * hw]
                            .iter_mut()
                            .for_each(|v| *v += bv[co]);
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), offset.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Ok(Tensor::from_op(vec![b, cout, h, w], out, parents, move |p, _, g| {
            let x = p[0].data();
            let off = p[1].data();
            let wt = p[2].data();
            let (need_x, need_off, need_w) = (p[0].requires_grad(), p[1].requires_grad(), p[2].requires_grad());
            let mut gx = need_x.then(|| vec![0.0; b * c * hw]);
            let mut goff = need_off.then(|| vec![0.0; b * 2 * kk * hw]);
            let mut gw = need_w.then(|| vec![0.0; cout * rows]);
            let mut cols = vec![0.0; rows * hw];
            let mut dcols = vec![0.0; rows * hw];
            for bi in 0..b {
                let taps = geom.taps(&off[bi * 2 * kk * hw..(bi + 1) * 2 * kk * hw]);
                let xb = &x[bi * c * hw..(bi + 1) * c * hw];
                let gb = &g[bi * cout * hw..(bi + 1) * cout * hw];
                if let Some(gw) = gw.as_mut() {
                    geom.columns(xb, &taps, &mut cols);
                    gemm(cout, hw, rows, gb, Layout::N, &cols, Layout::T, 1.0, gw);
                }
                if !(need_x || need_off) {
                    continue;
                }
                gemm(rows, cout, hw, &wt, Layout::T, gb, Layout::N, 0.0, &mut dcols);
                for ci in 0..c {
                    let plane = &xb[ci * hw..(ci + 1) * hw];
                    for t in 0..kk {
                        let dc = &dcols[(ci * kk + t) * hw..(ci * kk + t + 1) * hw];
                        for pix in 0..hw {
                            let gv = dc[pix];
                            if gv == 0.0 {
                                continue;
                            }
                            let tap = &taps[t * hw + pix];
                            if let Some(gx) = gx.as_mut() {
                                let gplane = &mut gx[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                                for (&i, wgt) in tap.idx.iter().zip(tap.weights()) {
                                    if i != usize::MAX {
                                        gplane[i] += gv * wgt;
                                    }
                                }
                            }
                            if let Some(goff) = goff.as_mut() {
                                let v = tap.corners(plane);
                                let (ly, lx) = (tap.ly, tap.lx);
                                let d_ly = (1.0 - lx) * (v[2] - v[0]) + lx * (v[3] - v[1]);
                                let d_lx = (1.0 - ly) * (v[1] - v[0]) + ly * (v[3] - v[2]);
                                let base = bi * 2 * kk * hw;
                                goff[base + 2 * t * hw + pix] += gv * d_ly;
                                goff[base + (2 * t + 1) * hw + pix] += gv * d_lx;
                            }
                        }
                    }
                }
            }
            let mut grads = vec![gx, goff, gw];
            if p.len() == 4 {
                grads.push(grad_if(&p[3], || {
                    let mut gbias = vec![0.0; cout];
                    for bi in 0..b {
                        for (co, acc) in gbias.iter_mut().enumerate() {
                            *acc += g[(bi * cout + co) * hw..(bi * cout + co + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    gbias
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Conv2dOptions;

    fn ramp(b: usize, c: usize, h: usize, w: usize) -> Tensor {
        let v = (0..b * c * h * w).map(|i| (i as f64 * 0.731).sin()).collect();
        Tensor::new(v, &[b, c, h, w]).unwrap()
    }

    #[test]
    fn zero_offset_is_plain_conv() {
        let x = ramp(2, 3, 5, 6);
        let w = Tensor::new((0..4 * 3 * 9).map(|i| (i as f64 * 0.37).cos()).collect(), &[4, 3, 3, 3]).unwrap();
        let bias = Tensor::new(vec![0.1, -0.2, 0.3, 0.0], &[4]).unwrap();
        let off = Tensor::zeros(&[2, 18, 5, 6]);
        let a = x.deform_conv2d(&off, &w, Some(&bias)).unwrap().to_vec();
        let b = x.conv2d(&w, Some(&bias), Conv2dOptions::padded(1)).unwrap().to_vec();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_offset_channels() {
        let x = ramp(1, 2, 4, 4);
        let w = Tensor::zeros(&[1, 2, 3, 3]);
        let off = Tensor::zeros(&[1, 9, 4, 4]);
        assert!(matches!(x.deform_conv2d(&off, &w, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn far_offsets_read_zero() {
        let x = ramp(1, 1, 4, 4);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let off = Tensor::full(&[1, 18, 4, 4], 100.0);
        let y = x.deform_conv2d(&off, &w, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
