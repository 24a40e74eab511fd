//! Adaptive illumination enhancement: hierarchical information extraction
//! (HIE) followed by curve-based mutual-attention enhancement (IMAE).

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, LayerNorm, Module};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Leaky-relu slope inside the curve estimator.
const CURVE_ACT_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImaConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of channel parts `S`.
    pub splits: usize,
    /// Curve order `N`.
    pub curve_order: usize,
}

impl ImaConvConfig {
    pub fn new(in_channels: usize, splits: usize, curve_order: usize) -> Self {
        Self {
            in_channels,
            out_channels: in_channels,
            splits,
            curve_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits < 2 {
            return Err(Error::Config(format!("IMAConv needs at least 2 splits, got {}", self.splits)));
        }
        if !self.in_channels.is_multiple_of(self.splits) {
            return Err(Error::Config(format!(
                "IMAConv splits {} do not divide {} input channels",
                self.splits, self.in_channels
            )));
        }
        if !self.out_channels.is_multiple_of(self.splits) {
            return Err(Error::Config(format!(
                "IMAConv splits {} do not divide {} output channels",
                self.splits, self.out_channels
            )));
        }
        if self.curve_order == 0 {
            return Err(Error::Config("curve order must be >= 1".into()));
        }
        Ok(())
    }

    pub fn part_channels(&self) -> usize {
        self.in_channels / self.splits
    }

    pub fn complement_channels(&self) -> usize {
        self.in_channels - self.part_channels()
    }
}

/// Curve maps `A_1..A_N`, each shaped like the part it modulates.
#[derive(Debug, Clone)]
pub struct CurveParams {
    pub maps: Vec<Tensor>,
}

/// Iterates `C_n = C_{n−1} + A_n·C_{n−1}·(1 − C_{n−1})` from `C_0 = x`,
/// consuming one map per order.
pub fn curve_map(x: &Tensor, params: &CurveParams) -> Result<Tensor> {
    let mut c = x.clone();
    for a in &params.maps {
        c = c.curve_step(a)?;
    }
    Ok(c)
}

/// conv5×5 → act → conv3×3 → act → conv1×1 → sigmoid, split into N maps.
#[derive(Debug)]
pub struct CurveEstimator {
    pub conv5: Conv2d,
    pub conv3: Conv2d,
    pub conv1: Conv2d,
    part: usize,
    order: usize,
}

impl CurveEstimator {
    pub fn new(rng: &mut Rng, cfg: &ImaConvConfig) -> Result<Self> {
        let (inp, part) = (cfg.complement_channels(), cfg.part_channels());
        Ok(Self {
            conv5: Conv2d::same(rng, inp, part, 5)?,
            conv3: Conv2d::same(rng, part, part, 3)?,
            conv1: Conv2d::pointwise(rng, part, cfg.curve_order * part)?,
            part,
            order: cfg.curve_order,
        })
    }

    pub fn forward(&self, complement: &Tensor) -> Result<CurveParams> {
        let h = self.conv5.forward(complement)?.leaky_relu(CURVE_ACT_SLOPE);
        let h = self.conv3.forward(&h)?.leaky_relu(CURVE_ACT_SLOPE);
        let a = self.conv1.forward(&h)?.sigmoid();
        Ok(CurveParams {
            maps: a.channel_split(&vec![self.part; self.order])?,
        })
    }
}

impl Module for CurveEstimator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv5.visit_params(&join(prefix, "conv5"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        self.conv1.visit_params(&join(prefix, "conv1"), f);
    }
}

/// Illumination mutual-attention convolution.
#[derive(Debug)]
pub struct ImaConv {
    pub config: ImaConvConfig,
    pub estimators: Vec<CurveEstimator>,
    pub convs: Vec<Conv2d>,
}

impl ImaConv {
    pub fn new(rng: &mut Rng, config: ImaConvConfig) -> Result<Self> {
        config.validate()?;
        let out_part = config.out_channels / config.splits;
        let mut estimators = Vec::with_capacity(config.splits);
        let mut convs = Vec::with_capacity(config.splits);
        for _ in 0..config.splits {
            estimators.push(CurveEstimator::new(rng, &config)?);
            convs.push(Conv2d::same(rng, config.part_channels(), out_part, 3)?);
        }
        Ok(Self {
            config,
            estimators,
            convs,
        })
    }

    /// Channels of every part except `i`, in order.
    pub fn complement(parts: &[Tensor], i: usize) -> Result<Tensor> {
        let rest: Vec<Tensor> = parts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| t.clone())
            .collect();
        Tensor::channel_concat(&rest)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dims4("imaconv")?[1];
        if c != self.config.in_channels {
            return Err(Error::dim(
                "imaconv",
                "channels",
                format!("expected {}, got {c}", self.config.in_channels),
            ));
        }
        let parts = x.chunk_channels(self.config.splits)?;
        let mut outs = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let params = self.estimators[i].forward(&Self::complement(&parts, i)?)?;
            let y = curve_map(part, &params)?;
            outs.push(self.convs[i].forward(&y)?);
        }
        Tensor::channel_concat(&outs)
    }
}

impl Module for ImaConv {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, (e, c)) in self.estimators.iter().zip(&self.convs).enumerate() {
            e.visit_params(&join(prefix, &format!("estimator{i}")), f);
            c.visit_params(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HieConfig {
    pub channels: usize,
    pub expansion: usize,
    /// Channel-attention reduction ratio.
    pub reduction: usize,
}

impl HieConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            expansion: 2,
            reduction: 4,
        }
    }

    pub fn expanded(&self) -> usize {
        self.channels * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        let wide = self.expanded();
        if self.channels == 0 || !wide.is_multiple_of(2) {
            return Err(Error::Config(format!("HIE expanded width {wide} must be even and non-zero")));
        }
        if self.reduction == 0 || !wide.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "HIE reduction {} must divide expanded width {wide}",
                self.reduction
            )));
        }
        Ok(())
    }
}

/// Hierarchical information extraction block.
#[derive(Debug)]
pub struct Hie {
    pub config: HieConfig,
    pub norm: LayerNorm,
    pub expand: Conv2d,
    pub dw3: Conv2d,
    pub ca_reduce: Conv2d,
    pub ca_expand: Conv2d,
    pub ca_proj: Conv2d,
    pub lka_dw5: Conv2d,
    pub lka_dw7: Conv2d,
    pub lka_pw: Conv2d,
    pub lka_proj: Conv2d,
    pub gate_proj: Option<Conv2d>,
    pub out: Conv2d,
}

impl Hie {
    pub fn new(rng: &mut Rng, config: HieConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let wide = config.expanded();
        let half = wide / 2;
        Ok(Self {
            config,
            norm: LayerNorm::new(c)?,
            expand: Conv2d::pointwise(rng, c, wide)?,
            dw3: Conv2d::depthwise(rng, wide, 3, 1)?,
            ca_reduce: Conv2d::pointwise(rng, wide, wide / config.reduction)?,
            ca_expand: Conv2d::pointwise(rng, wide / config.reduction, wide)?,
            ca_proj: Conv2d::pointwise(rng, wide, c)?,
            lka_dw5: Conv2d::depthwise(rng, wide, 5, 1)?,
            lka_dw7: Conv2d::depthwise(rng, wide, 7, 3)?,
            lka_pw: Conv2d::pointwise(rng, wide, wide)?,
            lka_proj: Conv2d::pointwise(rng, wide, c)?,
            // SimpleGate halves the width; project back only if that is not C.
            gate_proj: if half == c { None } else { Some(Conv2d::pointwise(rng, half, c)?) },
            out: Conv2d::pointwise(rng, c, c)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.dw3.forward(&self.expand.forward(&self.norm.forward(x)?)?)?;

        let halves = h.chunk_channels(2)?;
        let mut gate = halves[0].mul(&halves[1])?;
        if let Some(p) = &self.gate_proj {
            gate = p.forward(&gate)?;
        }

        let weights = self
            .ca_expand
            .forward(&self.ca_reduce.forward(&h.global_avg_pool()?)?.relu())?
            .sigmoid();
        let channel = self.ca_proj.forward(&h.channel_scale(&weights)?)?;

        let attn = self.lka_pw.forward(&self.lka_dw7.forward(&self.lka_dw5.forward(&h)?)?)?;
        let spatial = self.lka_proj.forward(&attn.mul(&h)?)?;

        let fused = gate.mul(&channel)?.mul(&spatial)?;
        x.add(&self.out.forward(&fused)?)
    }
}

impl Module for Hie {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.expand.visit_params(&join(prefix, "expand"), f);
        self.dw3.visit_params(&join(prefix, "dw3"), f);
        self.ca_reduce.visit_params(&join(prefix, "ca_reduce"), f);
        self.ca_expand.visit_params(&join(prefix, "ca_expand"), f);
        self.ca_proj.visit_params(&join(prefix, "ca_proj"), f);
        self.lka_dw5.visit_params(&join(prefix, "lka_dw5"), f);
        self.lka_dw7.visit_params(&join(prefix, "lka_dw7"), f);
        self.lka_pw.visit_params(&join(prefix, "lka_pw"), f);
        self.lka_proj.visit_params(&join(prefix, "lka_proj"), f);
        if let Some(p) = &self.gate_proj {
            p.visit_params(&join(prefix, "gate_proj"), f);
        }
        self.out.visit_params(&join(prefix, "out"), f);
    }
}

/// IMAE: `y + pw_out(IMAConv(σ(pw_in(LN(y)))))`.
///
/// The sigmoid keeps the curve input inside `(0, 1)`; the iterated quadratic
/// diverges on unbounded features.
#[derive(Debug)]
pub struct Imae {
    pub norm: LayerNorm,
    pub pw_in: Conv2d,
    pub imaconv: ImaConv,
    pub pw_out: Conv2d,
}

impl Imae {
    pub fn new(rng: &mut Rng, channels: usize, splits: usize, curve_order: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(channels)?,
            pw_in: Conv2d::pointwise(rng, channels, channels)?,
            imaconv: ImaConv::new(rng, ImaConvConfig::new(channels, splits, curve_order))?,
            pw_out: Conv2d::pointwise(rng, channels, channels)?,
        })
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let h = self.pw_in.forward(&self.norm.forward(y)?)?.sigmoid();
        let h = self.pw_out.forward(&self.imaconv.forward(&h)?)?;
        y.add(&h)
    }
}

impl Module for Imae {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.pw_in.visit_params(&join(prefix, "pw_in"), f);
        self.imaconv.visit_params(&join(prefix, "imaconv"), f);
        self.pw_out.visit_params(&join(prefix, "pw_out"), f);
    }
}

/// One adaptive illumination enhancement module.
#[derive(Debug)]
pub struct Aiem {
    pub hie: Hie,
    pub imae: Imae,
}

impl Aiem {
    pub fn new(rng: &mut Rng, channels: usize, splits: usize, curve_order: usize) -> Result<Self> {
        Ok(Self {
            hie: Hie::new(rng, HieConfig::new(channels))?,
            imae: Imae::new(rng, channels, splits, curve_order)?,
        })
    }

    /// Zeroes both residual output convolutions so the block starts as the
    /// identity.
    pub fn zero_residuals(self) -> Self {
        let Aiem { mut hie, mut imae } = self;
        hie.out = hie.out.zero_init();
        imae.pw_out = imae.pw_out.zero_init();
        Aiem { hie, imae }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.imae.forward(&self.hie.forward(x)?)
    }
}

impl Module for Aiem {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.hie.visit_params(&join(prefix, "hie"), f);
        self.imae.visit_params(&join(prefix, "imae"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        use rand::Rng as _;
        let mut r = rng::stream(seed, 99);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| r.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn curve_map_direct_value() {
        let x = Tensor::new(vec![0.5], &[1]).unwrap();
        let p = CurveParams {
            maps: vec![Tensor::new(vec![0.4], &[1]).unwrap()],
        };
        assert!((curve_map(&x, &p).unwrap().item() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn curve_map_fixed_points() {
        let x = Tensor::new(vec![0.0, 1.0], &[2]).unwrap();
        let p = CurveParams {
            maps: (0..5).map(|i| Tensor::full(&[2], 0.1 + 0.2 * i as f64)).collect(),
        };
        assert_eq!(curve_map(&x, &p).unwrap().to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn estimator_output_contract() {
        let mut r = rng::stream(1, 0);
        let cfg = ImaConvConfig::new(16, 4, 4);
        let est = CurveEstimator::new(&mut r, &cfg).unwrap();
        let p = est.forward(&random(&[2, 12, 5, 5], 2)).unwrap();
        assert_eq!(p.maps.len(), 4);
        for m in &p.maps {
            assert_eq!(m.shape(), &[2, 4, 5, 5]);
            assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn estimator_with_zeroed_final_conv_gives_half() {
        let mut r = rng::stream(1, 0);
        let cfg = ImaConvConfig::new(8, 2, 2);
        let mut est = CurveEstimator::new(&mut r, &cfg).unwrap();
        est.conv1 = est.conv1.zero_init();
        let p = est.forward(&Tensor::zeros(&[1, 4, 3, 3])).unwrap();
        for m in &p.maps {
            assert!(m.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn complement_of_two_parts() {
        let x = Tensor::new((0..4).map(f64::from).collect(), &[1, 4, 1, 1]).unwrap();
        let parts = x.chunk_channels(2).unwrap();
        assert_eq!(ImaConv::complement(&parts, 0).unwrap().to_vec(), vec![2.0, 3.0]);
        assert_eq!(ImaConv::complement(&parts, 1).unwrap().to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(ImaConvConfig::new(10, 4, 2).validate().is_err());
        assert!(ImaConvConfig::new(8, 1, 2).validate().is_err());
        assert!(ImaConvConfig::new(8, 4, 0).validate().is_err());
        assert!(ImaConvConfig::new(8, 4, 2).validate().is_ok());
        let mut h = HieConfig::new(6);
        h.reduction = 5;
        assert!(h.validate().is_err());
    }

    #[test]
    fn hie_with_zero_output_is_identity() {
        let mut r = rng::stream(4, 0);
        let mut hie = Hie::new(&mut r, HieConfig::new(8)).unwrap();
        hie.out = hie.out.zero_init();
        let x = random(&[1, 8, 6, 6], 5);
        assert_eq!(hie.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn aiem_preserves_shape_and_starts_as_identity() {
        let mut r = rng::stream(4, 0);
        let aiem = Aiem::new(&mut r, 8, 4, 3).unwrap();
        let x = random(&[2, 8, 5, 7], 6);
        assert_eq!(aiem.forward(&x).unwrap().shape(), x.shape());
        let aiem = aiem.zero_residuals();
        assert_eq!(aiem.forward(&x).unwrap().to_vec(), x.to_vec());
    }
}
