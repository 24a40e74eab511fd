//! Deformable bi-directional cross-attention between the restoration
//! decoder and the codebook-prior decoder.
//!
//! Both streams are projected (after layer norm) to queries and values of
//! shape `(B, C, H·W)`. One channel-by-channel attention matrix
//! `M = softmax(Q_D Q_Gᵀ / √C)` is shared by both directions:
//!
//! ```text
//! F_D' = γ_D ⊙ (M V_G) + F_D
//! F_G' = γ_G ⊙ (M V_D) + F_G
//! ```
//!
//! The concatenation of `F_D'` and `F_G'` drives a 7×7 offset estimator whose
//! offsets deform a convolution over `F_D'`.

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, LayerNorm, Module};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Kernel of the offset estimator.
pub const OFFSET_KERNEL: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DbcaConfig {
    pub channels: usize,
    /// Deformable kernel size `k`.
    pub kernel: usize,
}

impl DbcaConfig {
    pub fn new(channels: usize) -> Self {
        Self { channels, kernel: 3 }
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.kernel * self.kernel
    }
}

/// Outputs of the attention stage.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub fd_out: Tensor,
    pub fg_out: Tensor,
    /// `[B, C, C]` attention matrix.
    pub attention: Tensor,
}

#[derive(Debug)]
pub struct Dbca {
    pub config: DbcaConfig,
    pub norm_d: LayerNorm,
    pub norm_g: LayerNorm,
    pub query_d: Conv2d,
    pub query_g: Conv2d,
    pub value_d: Conv2d,
    pub value_g: Conv2d,
    /// Channel-wise residual scales, zero at initialization.
    pub gamma_d: Tensor,
    pub gamma_g: Tensor,
    pub offset: Conv2d,
    pub deform_weight: Tensor,
    pub deform_bias: Tensor,
}

impl Dbca {
    /// Initializes with zero `γ`, a zero offset estimator and a
    /// centred-identity deformable kernel, so the block starts as the
    /// identity on `F_D`.
    pub fn new(rng: &mut Rng, config: DbcaConfig) -> Result<Self> {
        let c = config.channels;
        let k = config.kernel;
        if c == 0 || k.is_multiple_of(2) {
            return Err(Error::Config(format!("DBCA needs C >= 1 and an odd kernel, got C={c} k={k}")));
        }
        let mut identity = vec![0.0; c * c * k * k];
        for ch in 0..c {
            identity[((ch * c + ch) * k + k / 2) * k + k / 2] = 1.0;
        }
        Ok(Self {
            config,
            norm_d: LayerNorm::new(c)?,
            norm_g: LayerNorm::new(c)?,
            query_d: Conv2d::pointwise(rng, c, c)?,
            query_g: Conv2d::pointwise(rng, c, c)?,
            value_d: Conv2d::pointwise(rng, c, c)?,
            value_g: Conv2d::pointwise(rng, c, c)?,
            gamma_d: Tensor::param(vec![0.0; c], &[c])?,
            gamma_g: Tensor::param(vec![0.0; c], &[c])?,
            offset: Conv2d::same(rng, 2 * c, config.offset_channels(), OFFSET_KERNEL)?.zero_init(),
            deform_weight: Tensor::param(identity, &[c, c, k, k])?,
            deform_bias: Tensor::param(vec![0.0; c], &[c])?,
        })
    }

    pub fn cross_attention(&self, fd: &Tensor, fg: &Tensor) -> Result<CrossAttention> {
        fd.same_shape(fg, "bidirectional_cross_attention")?;
        let [b, c, h, w] = fd.dims4("bidirectional_cross_attention")?;
        if c != self.config.channels {
            return Err(Error::dim(
                "bidirectional_cross_attention",
                "channels",
                format!("block has {} channels, input {c}", self.config.channels),
            ));
        }
        let flat = [b, c, h * w];
        let nd = self.norm_d.forward(fd)?;
        let ng = self.norm_g.forward(fg)?;
        let qd = self.query_d.forward(&nd)?.reshape(&flat)?;
        let qg = self.query_g.forward(&ng)?.reshape(&flat)?;
        let vd = self.value_d.forward(&nd)?.reshape(&flat)?;
        let vg = self.value_g.forward(&ng)?.reshape(&flat)?;

        let logits = qd.matmul(&qg.transpose_last()?)?.mul_scalar(1.0 / (c as f64).sqrt());
        let attention = logits.softmax(2)?;
        let ad = attention.matmul(&vd)?.reshape(&[b, c, h, w])?;
        let ag = attention.matmul(&vg)?.reshape(&[b, c, h, w])?;

        Ok(CrossAttention {
            fd_out: ag.channel_scale(&self.gamma_d)?.add(fd)?,
            fg_out: ad.channel_scale(&self.gamma_g)?.add(fg)?,
            attention,
        })
    }

    pub fn offset_estimate(&self, fd_out: &Tensor, fg_out: &Tensor) -> Result<Tensor> {
        fd_out.same_shape(fg_out, "offset_estimate")?;
        self.offset.forward(&Tensor::channel_concat(&[fd_out.clone(), fg_out.clone()])?)
    }

    pub fn forward(&self, fd: &Tensor, fg: &Tensor) -> Result<Tensor> {
        let att = self.cross_attention(fd, fg)?;
        let offset = self.offset_estimate(&att.fd_out, &att.fg_out)?;
        att.fd_out.deform_conv2d(&offset, &self.deform_weight, Some(&self.deform_bias))
    }
}

impl Module for Dbca {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm_d.visit_params(&join(prefix, "norm_d"), f);
        self.norm_g.visit_params(&join(prefix, "norm_g"), f);
        self.query_d.visit_params(&join(prefix, "query_d"), f);
        self.query_g.visit_params(&join(prefix, "query_g"), f);
        self.value_d.visit_params(&join(prefix, "value_d"), f);
        self.value_g.visit_params(&join(prefix, "value_g"), f);
        f(&join(prefix, "gamma_d"), &self.gamma_d);
        f(&join(prefix, "gamma_g"), &self.gamma_g);
        self.offset.visit_params(&join(prefix, "offset"), f);
        f(&join(prefix, "deform.weight"), &self.deform_weight);
        f(&join(prefix, "deform.bias"), &self.deform_bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{softmax_call_count, Conv2dOptions};
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 7);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| r.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn zero_gamma_is_exact_pass_through() {
        let mut r = rng::stream(0, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(4)).unwrap();
        let fd = random(&[2, 4, 3, 5], 1);
        let fg = random(&[2, 4, 3, 5], 2);
        let att = block.cross_attention(&fd, &fg).unwrap();
        assert_eq!(att.fd_out.to_vec(), fd.to_vec());
        assert_eq!(att.fg_out.to_vec(), fg.to_vec());
        assert_eq!(block.forward(&fd, &fg).unwrap().to_vec(), fd.to_vec());
    }

    #[test]
    fn attention_rows_sum_to_one_with_single_softmax() {
        let mut r = rng::stream(0, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(6)).unwrap();
        let before = softmax_call_count();
        let fd = random(&[1, 6, 4, 4], 3);
        let att = block.cross_attention(&fd, &random(&[1, 6, 4, 4], 4)).unwrap();
        assert_eq!(softmax_call_count() - before, 1);
        for row in att.attention.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_attention_returns_values() {
        let mut r = rng::stream(0, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(1)).unwrap();
        block.gamma_g.data_mut()[0] = 1.0;
        let fd = random(&[1, 1, 3, 3], 5);
        let fg = random(&[1, 1, 3, 3], 6);
        let att = block.cross_attention(&fd, &fg).unwrap();
        assert_eq!(att.attention.to_vec(), vec![1.0]);
        let vd = block.value_d.forward(&block.norm_d.forward(&fd).unwrap()).unwrap();
        let want = vd.add(&fg).unwrap().to_vec();
        assert_eq!(att.fg_out.to_vec(), want);
    }

    #[test]
    fn zero_offsets_reduce_to_conv() {
        let mut r = rng::stream(0, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(3)).unwrap();
        *block.deform_weight.data_mut() = random(&[3, 3, 3, 3], 8).to_vec();
        let fd = random(&[1, 3, 5, 5], 9);
        let got = block.forward(&fd, &random(&[1, 3, 5, 5], 10)).unwrap().to_vec();
        let want = fd
            .conv2d(&block.deform_weight, Some(&block.deform_bias), Conv2dOptions::padded(1))
            .unwrap()
            .to_vec();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn offset_channels_and_zero_init() {
        let mut r = rng::stream(0, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(2)).unwrap();
        let off = block.offset_estimate(&random(&[1, 2, 4, 4], 1), &random(&[1, 2, 4, 4], 2)).unwrap();
        assert_eq!(off.shape(), &[1, 18, 4, 4]);
        assert!(off.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_streams_are_rejected() {
        let mut r = rng::stream(0, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(2)).unwrap();
        assert!(block.forward(&Tensor::zeros(&[1, 2, 4, 4]), &Tensor::zeros(&[1, 2, 4, 3])).is_err());
    }
}
