//! Reshapes, channel slicing and resampling.

use super::{grad_if, numel, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::dim(
                "reshape",
                "numel",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], |p, _, g| {
            vec![grad_if(&p[0], || g.to_vec())]
        }))
    }

    /// Channels `start..start+len` of a `[B, C, H, W]` map.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4("narrow_channels")?;
        if start + len > c || len == 0 {
            return Err(Error::dim(
                "narrow_channels",
                "channels",
                format!("range {start}..{} out of {c}", start + len),
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(b * len * hw);
        {
            let x = self.data();
            for bi in 0..b {
                let off = (bi * c + start) * hw;
                data.extend_from_slice(&x[off..off + len * hw]);
            }
        }
        Ok(Tensor::from_op(vec![b, len, h, w], data, vec![self.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || {
                let mut gx = vec![0.0; b * c * hw];
                for bi in 0..b {
                    let dst = (bi * c + start) * hw;
                    let src = bi * len * hw;
                    gx[dst..dst + len * hw].copy_from_slice(&g[src..src + len * hw]);
                }
                gx
            })]
        }))
    }

    /// Splits a `[B, C, H, W]` map into consecutive channel groups.
    pub fn channel_split(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let c = self.dims4("channel_split")?[1];
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::dim(
                "channel_split",
                "channels",
                format!("sizes {sizes:?} do not sum to {c}"),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let t = self.narrow_channels(start, len);
                start += len;
                t
            })
            .collect()
    }

    /// Splits into `parts` equal channel groups.
    pub fn chunk_channels(&self, parts: usize) -> Result<Vec<Tensor>> {
        let c = self.dims4("chunk_channels")?[1];
        if parts == 0 || c % parts != 0 {
            return Err(Error::Config(format!("{parts} parts do not divide {c} channels")));
        }
        self.channel_split(&vec![c / parts; parts])
    }

    pub fn channel_concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("channel_concat", "inputs", "no tensors"))?;
        let [b, _, h, w] = first.dims4("channel_concat")?;
        let mut chans = Vec::with_capacity(parts.len());
        for t in parts {
            let [tb, tc, th, tw] = t.dims4("channel_concat")?;
            if (tb, th, tw) != (b, h, w) {
                return Err(Error::dim(
                    "channel_concat",
                    "batch/spatial",
                    format!("{:?} vs {:?}", t.shape(), first.shape()),
                ));
            }
            chans.push(tc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for (t, &tc) in parts.iter().zip(&chans) {
                let d = t.data();
                data.extend_from_slice(&d[bi * tc * hw..(bi + 1) * tc * hw]);
            }
        }
        Ok(Tensor::from_op(vec![b, total, h, w], data, parts.to_vec(), move |p, _, g| {
            let mut out = Vec::with_capacity(p.len());
            let mut start = 0;
            for (t, &tc) in p.iter().zip(&chans) {
                out.push(grad_if(t, || {
                    let mut gt = Vec::with_capacity(b * tc * hw);
                    for bi in 0..b {
                        let off = (bi * total + start) * hw;
                        gt.extend_from_slice(&g[off..off + tc * hw]);
                    }
                    gt
                }));
                start += tc;
            }
            out
        }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn nearest_upsample(&self, factor: usize) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4("nearest_upsample")?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be >= 1".into()));
        }
        let (ho, wo) = (h * factor, w * factor);
        let mut data = vec![0.0; b * c * ho * wo];
        {
            let x = self.data();
            for plane in 0..b * c {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                let dst = &mut data[plane * ho * wo..(plane + 1) * ho * wo];
                for y in 0..ho {
                    for xx in 0..wo {
                        dst[y * wo + xx] = src[(y / factor) * w + xx / factor];
                    }
                }
            }
        }
        Ok(Tensor::from_op(vec![b, c, ho, wo], data, vec![self.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || {
                let mut gx = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    let src = &g[plane * ho * wo..(plane + 1) * ho * wo];
                    let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..ho {
                        for xx in 0..wo {
                            dst[(y / factor) * w + xx / factor] += src[y * wo + xx];
                        }
                    }
                }
                gx
            })]
        }))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let (batch, r, c) = match self.shape() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            s => return Err(Error::dim("transpose", "rank", format!("expected rank 2 or 3, got {s:?}"))),
        };
        let mut shape = self.shape().to_vec();
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        let data = transpose_batched(&self.data(), batch, r, c);
        Ok(Tensor::from_op(shape, data, vec![self.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || transpose_batched(g, batch, c, r))]
        }))
    }
}

fn transpose_batched(x: &[f64], batch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let src = &x[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_then_concat_round_trips() {
        let data: Vec<f64> = (0..2 * 5 * 3 * 2).map(|i| i as f64 * 0.1 - 1.0).collect();
        let x = Tensor::new(data.clone(), &[2, 5, 3, 2]).unwrap();
        let parts = x.channel_split(&[2, 1, 2]).unwrap();
        let y = Tensor::channel_concat(&parts).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let x = Tensor::zeros(&[1, 4, 2, 2]);
        assert!(x.channel_split(&[1, 2]).is_err());
        assert!(matches!(x.chunk_channels(3), Err(Error::Config(_))));
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let y = x.nearest_upsample(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(&y.to_vec()[..4], &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn transpose_matches_definition() {
        let x = Tensor::new((0..6).map(f64::from).collect(), &[2, 3]).unwrap();
        let t = x.transpose_last().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }
}
