//! Standard and transposed 2-D convolution (cross-correlation, zero padding).

use super::gemm::{gemm, Layout};
use super::{grad_if, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn padded(padding: usize) -> Self {
        Self {
            padding,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTranspose2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl Default for ConvTranspose2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            output_padding: 0,
        }
    }
}

/// Sliding-window geometry of one image plane group.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn out_extent(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = input + 2 * pad;
    (padded >= span && stride > 0).then(|| (padded - span) / stride + 1)
}

/// Unfolds `x` (`c·h·w`) into `cols` (`c·kh·kw` rows of `ho·wo`).
pub(crate) fn im2col(x: &[f64], g: &Geom, cols: &mut [f64]) {
    let howo = g.cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * howo..(row + 1) * howo];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki * g.dil) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dil) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `cols` back onto `x`.
pub(crate) fn col2im(cols: &[f64], g: &Geom, x: &mut [f64]) {
    let howo = g.cols();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * howo..(row + 1) * howo];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki * g.dil) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj * g.dil) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(bias: Option<&Tensor>, cout: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::dim(op, "bias", format!("expected [{cout}], got {:?}", b.shape())));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: &[f64], batch: usize, plane: usize) {
    let cout = bias.len();
    for bi in 0..batch {
        for (co, &bv) in bias.iter().enumerate() {
            let off = (bi * cout + co) * plane;
            out[off..off + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(g: &[f64], batch: usize, cout: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; cout];
    for bi in 0..batch {
        for (co, acc) in gb.iter_mut().enumerate() {
            let off = (bi * cout + co) * plane;
            *acc += g[off..off + plane].iter().sum::<f64>();
        }
    }
    gb
}

impl Tensor {
    /// 2-D cross-correlation. `weight` is `[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, opts: Conv2dOptions) -> Result<Tensor> {
        let [b, cin, h, w] = self.dims4("conv2d")?;
        let [cout, cin_g, kh, kw] = weight.dims4("conv2d")?;
        let Conv2dOptions {
            stride,
            padding,
            dilation,
            groups,
        } = opts;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::Config(format!(
                "conv2d: groups {groups} must divide Cin {cin} and Cout {cout}"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config("conv2d: stride and dilation must be >= 1".into()));
        }
        if cin_g != cin / groups {
            return Err(Error::dim(
                "conv2d",
                "weight axis 1 (Cin/groups)",
                format!("input has {cin} channels in {groups} groups, weight expects {cin_g}"),
            ));
        }
        check_bias(bias, cout, "conv2d")?;
        let ho = out_extent(h, kh, stride, padding, dilation)
            .ok_or_else(|| Error::dim("conv2d", "height", format!("kernel {kh} larger than padded {h}")))?;
        let wo = out_extent(w, kw, stride, padding, dilation)
            .ok_or_else(|| Error::dim("conv2d", "width", format!("kernel {kw} larger than padded {w}")))?;
        let geom = Geom {
            c: cin_g,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            dil: dilation,
            ho,
            wo,
        };
        let cout_g = cout / groups;
        let (rows, howo) = (geom.rows(), geom.cols());

        let mut out = vec![0.0; b * cout * howo];
        {
            let x = self.data();
            let wt = weight.data();
            let mut cols = vec![0.0; if geom.is_pointwise() { 0 } else { rows * howo }];
            for bi in 0..b {
                for gi in 0..groups {
                    let xs = &x[(bi * cin + gi * cin_g) * h * w..][..cin_g * h * w];
                    let src: &[f64] = if geom.is_pointwise() {
                        xs
                    } else {
                        im2col(xs, &geom, &mut cols);
                        &cols
                    };
                    let off = (bi * cout + gi * cout_g) * howo;
                    gemm(
                        cout_g,
                        rows,
                        howo,
                        &wt[gi * cout_g * rows..],
                        Layout::N,
                        src,
                        Layout::N,
                        0.0,
                        &mut out[off..off + cout_g * howo],
                    );
                }
            }
            if let Some(bias) = bias {
                add_bias(&mut out, &bias.data(), b, howo);
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Ok(Tensor::from_op(vec![b, cout, ho, wo], out, parents, move |p, _, g| {
            let x = p[0].data();
            let wt = p[1].data();
            let need_x = p[0].requires_grad();
            let need_w = p[1].requires_grad();
            let mut gx = need_x.then(|| vec![0.0; b * cin * h * w]);
            let mut gw = need_w.then(|| vec![0.0; cout * rows]);
            let mut cols = vec![0.0; rows * howo];
            for bi in 0..b {
                for gi in 0..groups {
                    let go = &g[(bi * cout + gi * cout_g) * howo..][..cout_g * howo];
                    let x_off = (bi * cin + gi * cin_g) * h * w;
                    if let Some(gw) = gw.as_mut() {
                        let xs = &x[x_off..x_off + cin_g * h * w];
                        let src: &[f64] = if geom.is_pointwise() {
                            xs
                        } else {
                            im2col(xs, &geom, &mut cols);
                            &cols
                        };
                        gemm(
                            cout_g,
                            howo,
                            rows,
                            go,
                            Layout::N,
                            src,
                            Layout::T,
                            1.0,
                            &mut gw[gi * cout_g * rows..(gi + 1) * cout_g * rows],
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[x_off..x_off + cin_g * h * w];
                        if geom.is_pointwise() {
                            gemm(rows, cout_g, howo, &wt[gi * cout_g * rows..], Layout::T, go, Layout::N, 1.0, dst);
                        } else {
                            gemm(
                                rows,
                                cout_g,
                                howo,
                                &wt[gi * cout_g * rows..],
                                Layout::T,
                                go,
                                Layout::N,
                                0.0,
                                &mut cols,
                            );
                            col2im(&cols, &geom, dst);
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                grads.push(grad_if(&p[2], || bias_grad(g, b, cout, howo)));
            }
            grads
        }))
    }

    /// Transposed convolution. `weight` is `[Cin, Cout, kh, kw]`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        opts: ConvTranspose2dOptions,
    ) -> Result<Tensor> {
        let [b, cin, h, w] = self.dims4("conv_transpose2d")?;
        let [wcin, cout, kh, kw] = weight.dims4("conv_transpose2d")?;
        if wcin != cin {
            return Err(Error::dim(
                "conv_transpose2d",
                "weight axis 0 (Cin)",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        check_bias(bias, cout, "conv_transpose2d")?;
        let ConvTranspose2dOptions {
            stride,
            padding,
            output_padding,
        } = opts;
        if stride == 0 || output_padding >= stride {
            return Err(Error::Config(
                "conv_transpose2d: need stride >= 1 and output_padding < stride".into(),
            ));
        }
        let extent = |n: usize, k: usize| ((n - 1) * stride + k + output_padding).checked_sub(2 * padding);
        let ho = extent(h, kh).filter(|&v| v > 0);
        let wo = extent(w, kw).filter(|&v| v > 0);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::dim("conv_transpose2d", "spatial", "padding exceeds output extent"));
        };
        // The forward pass is the input-gradient of a conv over the output.
        let geom = Geom {
            c: cout,
            h: ho,
            w: wo,
            kh,
            kw,
            stride,
            pad: padding,
            dil: 1,
            ho: h,
            wo: w,
        };
        let rows = geom.rows();
        let hw = h * w;
        let mut out = vec![0.0; b * cout * ho * wo];
        {
            let x = self.data();
            let wt = weight.data();
            let mut cols = vec![0.0; rows * hw];
            for bi in 0..b {
                gemm(rows, cin, hw, &wt, Layout::T, &x[bi * cin * hw..], Layout::N, 0.0, &mut cols);
                col2im(&cols, &geom, &mut out[bi * cout * ho * wo..(bi + 1) * cout * ho * wo]);
            }
            if let Some(bias) = bias {
                add_bias(&mut out, &bias.data(), b, ho * wo);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Ok(Tensor::from_op(vec![b, cout, ho, wo], out, parents, move |p, _, g| {
            let x = p[0].data();
            let wt = p[1].data();
            let mut gx = p[0].requires_grad().then(|| vec![0.0; b * cin * hw]);
            let mut gw = p[1].requires_grad().then(|| vec![0.0; cin * rows]);
            let mut cols = vec![0.0; rows * hw];
            for bi in 0..b {
                im2col(&g[bi * cout * ho * wo..(bi + 1) * cout * ho * wo], &geom, &mut cols);
                if let Some(gx) = gx.as_mut() {
                    gemm(cin, rows, hw, &wt, Layout::N, &cols, Layout::N, 0.0, &mut gx[bi * cin * hw..(bi + 1) * cin * hw]);
                }
                if let Some(gw) = gw.as_mut() {
                    gemm(cin, hw, rows, &x[bi * cin * hw..], Layout::N, &cols, Layout::T, 1.0, gw);
                }
            }
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                grads.push(grad_if(&p[2], || bias_grad(g, b, cout, ho * wo)));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let v: Vec<f64> = (0..9).map(|i| i as f64 * 0.5 - 1.0).collect();
        let x = Tensor::new(v.clone(), &[1, 1, 3, 3]).unwrap();
        let w = Tensor::new(vec![1.0], &[1, 1, 1, 1]).unwrap();
        let y = x.conv2d(&w, None, Conv2dOptions::default()).unwrap();
        assert_eq!(y.to_vec(), v);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, None, Conv2dOptions::padded(1)).unwrap().to_vec();
        assert_eq!(y[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y[corner], 4.0);
        }
        assert_eq!(y[1], 6.0);
    }

    #[test]
    fn groups_must_divide_channels() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 1, 3, 3]);
        let opts = Conv2dOptions {
            groups: 2,
            ..Conv2dOptions::default()
        };
        assert!(matches!(x.conv2d(&w, None, opts), Err(Error::Config(_))));
    }

    #[test]
    fn weight_channel_mismatch_names_axis() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        match x.conv2d(&w, None, Conv2dOptions::default()) {
            Err(Error::Dimension { axis, .. }) => assert!(axis.contains("Cin")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let x = Tensor::full(&[1, 2, 4, 4], 1.0);
        let w = Tensor::full(&[2, 3, 4, 4], 0.1);
        let opts = ConvTranspose2dOptions {
            stride: 2,
            padding: 1,
            output_padding: 0,
        };
        let y = x.conv_transpose2d(&w, None, opts).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8, 8]);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same weight.
        let x: Vec<f64> = (0..2 * 5 * 5).map(|i| ((i * 7 % 13) as f64) / 13.0 - 0.5).collect();
        let y: Vec<f64> = (0..3 * 3 * 3).map(|i| ((i * 5 % 11) as f64) / 11.0 - 0.5).collect();
        let w: Vec<f64> = (0..3 * 2 * 3 * 3).map(|i| ((i * 3 % 7) as f64) / 7.0 - 0.5).collect();
        let xt = Tensor::new(x.clone(), &[1, 2, 5, 5]).unwrap();
        let yt = Tensor::new(y.clone(), &[1, 3, 3, 3]).unwrap();
        let conv_w = Tensor::new(w.clone(), &[3, 2, 3, 3]).unwrap();
        let opts = Conv2dOptions {
            stride: 2,
            padding: 1,
            ..Conv2dOptions::default()
        };
        let cx = xt.conv2d(&conv_w, None, opts).unwrap().to_vec();
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        // conv weight [Cout=3, Cin=2] read as transposed weight [Cin=3, Cout=2].
        let tw = Tensor::new(w, &[3, 2, 3, 3]).unwrap();
        let topts = ConvTranspose2dOptions {
            stride: 2,
            padding: 1,
            output_padding: 0,
        };
        let ty = yt.conv_transpose2d(&tw, None, topts).unwrap();
        assert_eq!(ty.shape(), &[1, 2, 5, 5]);
        let rhs: f64 = ty.to_vec().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
