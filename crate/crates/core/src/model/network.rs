use crate::aiem::Aiem;
use crate::codebook::{Codebook, QuantizationResult};
use crate::dbca::{Dbca, DbcaConfig};
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, Module, ResBlock, Upsample2x};
use crate::rng::{self, Rng};
use crate::tensor::{Conv2dOptions, Tensor};

use super::ModelConfig;

const ACT_SLOPE: f64 = 0.2;

fn down_conv(rng: &mut Rng, cin: usize, cout: usize) -> Result<Conv2d> {
    let opts = Conv2dOptions {
        stride: 2,
        padding: 1,
        ..Default::default()
    };
    Conv2d::new(rng, cin, cout, 3, opts)
}

/// Convolutional stem, `num_scales` stride-2 stages, projection to `n_z`.
#[derive(Debug)]
pub struct Encoder {
    pub conv_in: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub downs: Vec<Conv2d>,
    pub mid: ResBlock,
    pub to_latent: Conv2d,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub latent: Tensor,
    /// Pre-downsampling features, finest first; `skips[l]` is at `1/2^l`.
    pub skips: Vec<Tensor>,
    /// Output of each downsampling stage, finest first.
    pub stages: Vec<Tensor>,
}

impl Encoder {
    pub fn new(rng: &mut Rng, cfg: &ModelConfig) -> Result<Self> {
        let l = cfg.num_scales;
        Ok(Self {
            conv_in: Conv2d::same(rng, 3, cfg.channels(0), 3)?,
            blocks: (0..l).map(|i| ResBlock::new(rng, cfg.channels(i))).collect::<Result<_>>()?,
            downs: (0..l)
                .map(|i| down_conv(rng, cfg.channels(i), cfg.channels(i + 1)))
                .collect::<Result<_>>()?,
            mid: ResBlock::new(rng, cfg.channels(l))?,
            to_latent: Conv2d::pointwise(rng, cfg.channels(l), cfg.code_dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<EncoderOutput> {
        let mut h = self.conv_in.forward(&x.add_scalar(-0.5))?;
        let mut skips = Vec::with_capacity(self.blocks.len());
        let mut stages = Vec::with_capacity(self.blocks.len());
        for (block, down) in self.blocks.iter().zip(&self.downs) {
            h = block.forward(&h)?;
            skips.push(h.clone());
            h = down.forward(&h.leaky_relu(ACT_SLOPE))?;
            stages.push(h.clone());
        }
        let latent = self.to_latent.forward(&self.mid.forward(&h)?.leaky_relu(ACT_SLOPE))?;
        Ok(EncoderOutput { latent, skips, stages })
    }
}

impl Module for Encoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv_in.visit_params(&join(prefix, "conv_in"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, d) in self.downs.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("downs.{i}")), f);
        }
        self.mid.visit_params(&join(prefix, "mid"), f);
        self.to_latent.visit_params(&join(prefix, "to_latent"), f);
    }
}

/// Per-scale decoder stage: residual block then 2× upsampling.
#[derive(Debug)]
pub struct UpStage {
    pub block: ResBlock,
    pub up: Upsample2x,
}

impl UpStage {
    fn new(rng: &mut Rng, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            block: ResBlock::new(rng, cin)?,
            up: Upsample2x::new(rng, cin, cout)?,
        })
    }
}

impl Module for UpStage {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.block.visit_params(&join(prefix, "block"), f);
        self.up.visit_params(&join(prefix, "up"), f);
    }
}

fn up_stages(rng: &mut Rng, cfg: &ModelConfig) -> Result<Vec<UpStage>> {
    (1..=cfg.num_scales)
        .rev()
        .map(|l| UpStage::new(rng, cfg.channels(l), cfg.channels(l - 1)))
        .collect()
}

/// Codebook-prior decoder. Frozen after stage 1.
#[derive(Debug)]
pub struct DecoderG {
    pub from_latent: Conv2d,
    /// Coarsest first.
    pub stages: Vec<UpStage>,
    pub out_block: ResBlock,
    pub head: Conv2d,
}

#[derive(Debug, Clone)]
pub struct PriorOutput {
    /// Features entering each upsampling stage, coarsest first.
    pub features: Vec<Tensor>,
    pub image: Tensor,
}

impl DecoderG {
    pub fn new(rng: &mut Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            from_latent: Conv2d::pointwise(rng, cfg.code_dim, cfg.channels(cfg.num_scales))?,
            stages: up_stages(rng, cfg)?,
            out_block: ResBlock::new(rng, cfg.channels(0))?,
            head: Conv2d::same(rng, cfg.channels(0), 3, 3)?,
        })
    }

    pub fn forward(&self, z_q: &Tensor) -> Result<PriorOutput> {
        let mut h = self.from_latent.forward(z_q)?;
        let mut features = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            h = stage.block.forward(&h)?;
            features.push(h.clone());
            h = stage.up.forward(&h.leaky_relu(ACT_SLOPE))?;
        }
        let image = self
            .head
            .forward(&self.out_block.forward(&h)?.leaky_relu(ACT_SLOPE))?
            .add_scalar(0.5);
        Ok(PriorOutput { features, image })
    }
}

impl Module for DecoderG {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.from_latent.visit_params(&join(prefix, "from_latent"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stages.{i}")), f);
        }
        self.out_block.visit_params(&join(prefix, "out_block"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

/// Restoration decoder: mirrors `DecoderG`, adds encoder skips after each
/// upsampling and fuses the co-resolution prior feature through DBCA before it.
#[derive(Debug)]
pub struct DecoderD {
    pub from_latent: Conv2d,
    pub stages: Vec<UpStage>,
    /// One block per downsampled scale, coarsest first.
    pub dbca: Vec<Dbca>,
    pub out_block: ResBlock,
    pub head: Conv2d,
}

impl DecoderD {
    pub fn new(rng: &mut Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            from_latent: Conv2d::pointwise(rng, cfg.code_dim, cfg.channels(cfg.num_scales))?,
            stages: up_stages(rng, cfg)?,
            dbca: (1..=cfg.num_scales)
                .rev()
                .map(|l| {
                    Dbca::new(
                        rng,
                        DbcaConfig {
                            channels: cfg.channels(l),
                            kernel: cfg.dbca_kernel,
                        },
                    )
                })
                .collect::<Result<_>>()?,
            out_block: ResBlock::new(rng, cfg.channels(0))?,
            head: Conv2d::same(rng, cfg.channels(0), 3, 3)?,
        })
    }

    pub fn forward(&self, z: &Tensor, skips: &[Tensor], prior: &[Tensor], use_dbca: bool) -> Result<Tensor> {
        let mut h = self.from_latent.forward(z)?;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.block.forward(&h)?;
            if use_dbca {
                h = self.dbca[i].forward(&h, &prior[i])?;
            }
            h = stage.up.forward(&h.leaky_relu(ACT_SLOPE))?;
            h = h.add(&skips[skips.len() - 1 - i])?;
        }
        Ok(self
            .head
            .forward(&self.out_block.forward(&h)?.leaky_relu(ACT_SLOPE))?
            .add_scalar(0.5))
    }
}

impl Module for DecoderD {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.from_latent.visit_params(&join(prefix, "from_latent"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stages.{i}")), f);
        }
        for (i, d) in self.dbca.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("dbca.{i}")), f);
        }
        self.out_block.visit_params(&join(prefix, "out_block"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

/// Four stride-2 `4×4` convolutions emitting a patch logit map.
#[derive(Debug)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(rng: &mut Rng, base: usize) -> Result<Self> {
        let widths = [3, base, 2 * base, 4 * base, 1];
        let opts = Conv2dOptions {
            stride: 2,
            padding: 1,
            ..Default::default()
        };
        Ok(Self {
            convs: widths
                .windows(2)
                .map(|w| Conv2d::new(rng, w[0], w[1], 4, opts))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i != last {
                h = h.leaky_relu(ACT_SLOPE);
            }
        }
        Ok(h)
    }
}

impl Module for Discriminator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("convs.{i}")), f);
        }
    }
}

fn check_divisible(x: &Tensor, cfg: &ModelConfig, op: &str) -> Result<()> {
    let [_, c, h, w] = x.dims4("model_forward")?;
    let m = 1usize << cfg.num_scales;
    if c != 3 {
        return Err(Error::dim("model_forward", "channels", format!("expected RGB input, got {c} channels")));
    }
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(Error::Contract(format!(
            "{op}: input {h}x{w} must be a positive multiple of {m} in both dimensions; pad the image first"
        )));
    }
    Ok(())
}

/// Stage-1 autoencoder: `E_hq`, codebook and `G`.
#[derive(Debug)]
pub struct Vqgan {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub codebook: Codebook,
    pub decoder: DecoderG,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Tensor,
    pub latent: Tensor,
    pub quant: QuantizationResult,
}

impl Vqgan {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(cfg.seed, 1);
        Ok(Self {
            encoder: Encoder::new(&mut r, &cfg)?,
            codebook: Codebook::new(&mut r, cfg.codebook_size, cfg.code_dim)?,
            decoder: DecoderG::new(&mut r, &cfg)?,
            config: cfg,
        })
    }

    /// Straight-through reconstruction: the decoder sees `z_q` and its
    /// gradient is copied onto the encoder output.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Reconstruction> {
        check_divisible(x, &self.config, "reconstruct")?;
        let latent = self.encoder.forward(x)?.latent;
        let quant = self.codebook.quantize(&latent)?;
        let image = self.decoder.forward(&latent.pass_through(&quant.quantized)?)?.image;
        Ok(Reconstruction { image, latent, quant })
    }
}

impl Module for Vqgan {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.codebook.visit_params(&join(prefix, "codebook"), f);
        self.decoder.visit_params(&join(prefix, "decoder_g"), f);
    }
}

/// Full restoration network.
#[derive(Debug)]
pub struct Vqcnir {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub aiem: Vec<Aiem>,
    pub codebook: Codebook,
    pub decoder_g: DecoderG,
    pub decoder_d: DecoderD,
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub restored: Tensor,
    /// Night latent after the AIEM stack.
    pub z_e: Tensor,
    pub quant: QuantizationResult,
}

impl Vqcnir {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let Vqgan {
            config,
            encoder,
            codebook,
            decoder,
        } = Vqgan::new(cfg)?;
        Self::assemble(config, encoder, codebook, decoder)
    }

    /// Builds the stage-2 model around stage-1 components. The night
    /// encoder starts as a copy of the stage-1 encoder.
    pub fn from_stage1(stage1: Vqgan) -> Result<Self> {
        let Vqgan {
            config,
            encoder: e_hq,
            codebook,
            decoder,
        } = stage1;
        let mut r = rng::stream(config.seed, 1);
        let encoder = Encoder::new(&mut r, &config)?;
        crate::nn::copy_params(&e_hq, &encoder)?;
        Self::assemble(config, encoder, codebook, decoder)
    }

    fn assemble(config: ModelConfig, encoder: Encoder, codebook: Codebook, decoder_g: DecoderG) -> Result<Self> {
        let mut r = rng::stream(config.seed, 2);
        let aiem = (0..config.aiem_blocks)
            .map(|_| Ok(Aiem::new(&mut r, config.code_dim, config.curve_splits, config.curve_order)?.zero_residuals()))
            .collect::<Result<_>>()?;
        let decoder_d = DecoderD::new(&mut r, &config)?;
        Ok(Self {
            config,
            encoder,
            aiem,
            codebook,
            decoder_g,
            decoder_d,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Restoration> {
        check_divisible(x, &self.config, "vqcnir_forward")?;
        let enc = self.encoder.forward(x)?;
        let mut z_e = enc.latent;
        if self.config.use_aiem {
            for block in &self.aiem {
                z_e = block.forward(&z_e)?;
            }
        }
        let quant = self.codebook.quantize(&z_e)?;
        let prior = self.decoder_g.forward(&quant.quantized)?;
        let restored = if self.config.use_decoder_d {
            self.decoder_d.forward(&z_e, &enc.skips, &prior.features, self.config.use_dbca)?
        } else {
            prior.image
        };
        Ok(Restoration { restored, z_e, quant })
    }

    /// Parameters updated in stage 2.
    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        let mut out = crate::nn::named_params(&self.encoder, "encoder");
        for (i, a) in self.aiem.iter().enumerate() {
            out.extend(crate::nn::named_params(a, &format!("aiem.{i}")));
        }
        out.extend(crate::nn::named_params(&self.decoder_d, "decoder_d"));
        out
    }

    /// Parameters that stage 2 must leave untouched.
    pub fn frozen(&self) -> Vec<(String, Tensor)> {
        let mut out = crate::nn::named_params(&self.codebook, "codebook");
        out.extend(crate::nn::named_params(&self.decoder_g, "decoder_g"));
        out
    }
}

impl Module for Vqcnir {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        for (i, a) in self.aiem.iter().enumerate() {
            a.visit_params(&join(prefix, &format!("aiem.{i}")), f);
        }
        self.codebook.visit_params(&join(prefix, "codebook"), f);
        self.decoder_g.visit_params(&join(prefix, "decoder_g"), f);
        self.decoder_d.visit_params(&join(prefix, "decoder_d"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::code_alignment_loss;
    use crate::model::{pixel_loss, Adam};
    use crate::nn::{named_params, set_trainable};
    use rand::Rng as _;

    fn image(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 9);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| r.random_range(0.0..1.0)).collect(), shape).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            num_scales: 2,
            codebook_size: 16,
            code_dim: 16,
            ..Default::default()
        }
    }

    #[test]
    fn forward_preserves_shape() {
        let cfg = ModelConfig {
            base_channels: 4,
            code_dim: 8,
            curve_splits: 2,
            ..Default::default()
        };
        let m = Vqcnir::new(cfg).unwrap();
        let x = image(&[1, 3, 64, 64], 1);
        let out = crate::no_grad(|| m.forward(&x)).unwrap();
        assert_eq!(out.restored.shape(), &[1, 3, 64, 64]);
        assert_eq!(out.z_e.shape(), &[1, 8, 8, 8]);
        assert!(out.restored.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn indivisible_input_is_contract_error() {
        let m = Vqcnir::new(small()).unwrap();
        let err = m.forward(&image(&[1, 3, 30, 32], 2)).unwrap_err();
        assert!(matches!(err, Error::Contract(ref msg) if msg.contains("pad")), "{err}");
    }

    #[test]
    fn ablations_run() {
        for flags in [(false, true, true), (true, false, true), (true, true, false)] {
            let cfg = ModelConfig {
                use_aiem: flags.0,
                use_dbca: flags.1,
                use_decoder_d: flags.2,
                ..small()
            };
            let out = crate::no_grad(|| Vqcnir::new(cfg).unwrap().forward(&image(&[1, 3, 16, 16], 3))).unwrap();
            assert_eq!(out.restored.shape(), &[1, 3, 16, 16]);
        }
    }

    /// Zero-initialized offsets and γ silence parts of the network on the
    /// first backward. The longest chain (offset conv, then γ_g, then the
    /// generator-side value projection) needs two updates to open.
    #[test]
    fn every_trainable_tensor_gets_gradient_after_two_updates() {
        let m = Vqcnir::new(small()).unwrap();
        set_trainable(&m.codebook, false);
        set_trainable(&m.decoder_g, false);
        let x = image(&[1, 3, 32, 32], 4);
        let gt = image(&[1, 3, 32, 32], 5);
        let mut opt = Adam::new(m.trainable().into_iter().map(|(_, t)| t));
        let step = |opt: &mut Adam| {
            opt.zero_grad();
            let out = m.forward(&x).unwrap();
            let z_gt = Tensor::zeros(out.z_e.shape());
            let loss = pixel_loss(&out.restored, &gt)
                .unwrap()
                .add(&code_alignment_loss(&out.z_e, &z_gt).unwrap())
                .unwrap();
            loss.backward().unwrap();
        };
        for _ in 0..2 {
            step(&mut opt);
            opt.step(1e-3);
        }
        step(&mut opt);
        for (name, t) in m.trainable() {
            let g = t.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(g.iter().all(|v| v.is_finite()), "{name} has a non-finite gradient");
            assert!(g.iter().any(|&v| v != 0.0), "{name} has an all-zero gradient");
        }
        for (name, t) in named_params(&m.decoder_g, "decoder_g") {
            assert!(t.grad().is_none(), "{name} is frozen but received a gradient");
        }
    }

    #[test]
    fn dbca_blocks_match_decoder_scales() {
        let m = Vqcnir::new(ModelConfig::default()).unwrap();
        let widths: Vec<usize> = m.decoder_d.dbca.iter().map(|d| d.config.channels).collect();
        assert_eq!(widths, vec![64, 64, 32]);
    }
}
