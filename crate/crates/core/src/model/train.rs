//! Stage 1 (codebook prior) and stage 2 (restoration) training loops.

use rand::Rng as _;

use super::loss::{discriminator_hinge, generator_hinge, pixel_loss, total_loss, LossParts, LossWeights};
use super::optim::{multistep_lr, Adam};
use super::{infer, Discriminator, Encoder, ModelConfig, Vqcnir, Vqgan};
use crate::codebook::{code_alignment_loss, codebook_learning_loss, UsageTracker, COMMITMENT_BETA};
use crate::data::{ImageRGB, Pair};
use crate::error::{Error, Result};
use crate::nn::{copy_params, named_params, set_trainable};
use crate::rng::{self, Rng};
use crate::tensor::{no_grad, Tensor};

/// Learning-rate multiplier for every DBCA parameter in stage 2.
pub const DBCA_LR_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub seed: u64,
    pub log_interval: usize,
    pub weights: LossWeights,
    /// Weight of the optional stage-1 adversarial term (0 disables it).
    pub stage1_adv_weight: f64,
    /// Iterations before the stage-1 adversarial term switches on.
    pub stage1_adv_start: usize,
    /// Random flips and quarter turns on training crops.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 4,
            crop: 64,
            lr: 1e-4,
            milestones: vec![],
            decay: 0.5,
            seed: 0,
            log_interval: 100,
            weights: LossWeights::default(),
            stage1_adv_weight: 0.0,
            stage1_adv_start: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.milestones.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("milestones {:?} must be strictly increasing", self.milestones)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay {} must lie in (0, 1)", self.decay)));
        }
        if self.batch_size == 0 || self.log_interval == 0 || self.iterations == 0 {
            return Err(Error::Config("iterations, batch_size and log_interval must be >= 1".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(model.divisor()) {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of {}",
                self.crop,
                model.divisor()
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        multistep_lr(iter, self.lr, &self.milestones, self.decay)
    }
}

/// One `metrics` log line.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub l_pix: f64,
    pub l_ca: f64,
    pub l_per: f64,
    pub l_adv: f64,
    pub lr: f64,
    pub psnr_val: f64,
}

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "iter={} loss={:.6} l_pix={:.6} l_ca={:.6} l_per={:.6} l_adv={:.6} lr={:.3e} psnr_val={:.4}",
            self.iter, self.loss, self.l_pix, self.l_ca, self.l_per, self.l_adv, self.lr, self.psnr_val
        )
    }
}

/// Crop position and augmentation of one batch element.
#[derive(Clone, Copy, Debug)]
struct View {
    index: usize,
    x: usize,
    y: usize,
    flip: bool,
    turns: usize,
}

fn draw_views(r: &mut Rng, sizes: &[(usize, usize)], cfg: &TrainConfig) -> Result<Vec<View>> {
    (0..cfg.batch_size)
        .map(|_| {
            let index = r.random_range(0..sizes.len());
            let (w, h) = sizes[index];
            if w < cfg.crop || h < cfg.crop {
                return Err(Error::Config(format!("image {index} ({w}x{h}) is smaller than crop {}", cfg.crop)));
            }
            Ok(View {
                index,
                x: r.random_range(0..=w - cfg.crop),
                y: r.random_range(0..=h - cfg.crop),
                flip: cfg.augment && r.random_bool(0.5),
                turns: if cfg.augment { r.random_range(0..4) } else { 0 },
            })
        })
        .collect()
}

fn apply(img: &ImageRGB, v: &View, crop: usize) -> ImageRGB {
    let mut out = img.crop(v.x, v.y, crop, crop);
    if v.flip {
        out = out.flip_horizontal();
    }
    out.rotate90(v.turns)
}

fn batch(images: &[&ImageRGB], views: &[View], crop: usize) -> Result<Tensor> {
    let crops: Vec<ImageRGB> = views.iter().map(|v| apply(images[v.index], v, crop)).collect();
    ImageRGB::batch_to_tensor(&crops)
}

fn finite(iter: usize, name: &str, t: &Tensor) -> Result<f64> {
    let v = t.item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            iter,
            msg: format!("{name} became {v}"),
        })
    }
}

fn snapshot(params: &[(String, Tensor)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, t)| t.to_vec()).collect()
}

fn check_frozen(params: &[(String, Tensor)], reference: &[Vec<f64>]) -> Result<()> {
    for ((name, t), want) in params.iter().zip(reference) {
        let same = t.data().iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::Contract(format!("frozen parameter `{name}` changed during stage 2")));
        }
    }
    Ok(())
}

fn tensors(params: Vec<(String, Tensor)>) -> Vec<Tensor> {
    params.into_iter().map(|(_, t)| t).collect()
}

/// Trains `E_hq`, the codebook and `G` on clean images. Dead codes are
/// reseeded from the current batch once per epoch.
pub fn train_stage1(
    train: &[ImageRGB],
    val: &[ImageRGB],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<Vqgan> {
    model_cfg.validate()?;
    cfg.validate(model_cfg)?;
    if train.is_empty() {
        return Err(Error::Config("stage 1 needs at least one training image".into()));
    }
    let model = Vqgan::new(*model_cfg)?;
    let disc = if cfg.stage1_adv_weight > 0.0 {
        Some(Discriminator::new(&mut rng::stream(model_cfg.seed, 3), model_cfg.base_channels)?)
    } else {
        None
    };
    let mut opt = Adam::new(tensors(named_params(&model, "")));
    let mut opt_d = disc.as_ref().map(|d| Adam::new(tensors(named_params(d, ""))));

    let images: Vec<&ImageRGB> = train.iter().collect();
    let sizes: Vec<(usize, usize)> = train.iter().map(|i| (i.width, i.height)).collect();
    let mut data_rng = rng::stream(cfg.seed, 10);
    let mut reseed_rng = rng::stream(cfg.seed, 11);
    let epoch = train.len().div_ceil(cfg.batch_size).max(1);
    let mut usage = UsageTracker::new(model_cfg.codebook_size);

    for it in 1..=cfg.iterations {
        let lr = cfg.lr_at(it - 1);
        let x = batch(&images, &draw_views(&mut data_rng, &sizes, cfg)?, cfg.crop)?;
        let adv_on = disc.is_some() && it > cfg.stage1_adv_start;
        if let Some(d) = &disc {
            set_trainable(d, false);
        }

        let rec = model.reconstruct(&x)?;
        let l_pix = pixel_loss(&rec.image, &x)?;
        let l_cb = codebook_learning_loss(&rec.latent, &rec.quant, COMMITMENT_BETA)?;
        let l_adv = match (&disc, adv_on) {
            (Some(d), true) => generator_hinge(d, &rec.image)?,
            _ => Tensor::scalar(0.0),
        };
        let loss = l_pix.add(&l_cb)?.add(&l_adv.mul_scalar(cfg.stage1_adv_weight))?;
        let loss_v = finite(it, "stage-1 loss", &loss)?;

        opt.zero_grad();
        loss.backward()?;
        opt.step(lr);

        if let (Some(d), Some(od), true) = (&disc, opt_d.as_mut(), adv_on) {
            set_trainable(d, true);
            let dl = discriminator_hinge(d, &rec.image.detach(), &x)?;
            finite(it, "discriminator loss", &dl)?;
            od.zero_grad();
            dl.backward()?;
            od.step(lr);
        }

        usage.record(&rec.quant.indices);
        if it % epoch == 0 {
            model.codebook.reseed(&usage.dead(), &rec.latent, &mut reseed_rng)?;
            usage.reset();
        }

        if it % cfg.log_interval == 0 || it == cfg.iterations {
            let psnr_val = if val.is_empty() {
                f64::NAN
            } else {
                infer::reconstruction_psnr(&model, val)?
            };
            let rec_line = LogRecord {
                iter: it,
                loss: loss_v,
                l_pix: l_pix.item(),
                l_ca: l_cb.item(),
                l_per: 0.0,
                l_adv: l_adv.item(),
                lr,
                psnr_val,
            };
            log(&rec_line.to_string());
        }
    }
    Ok(model)
}

pub struct Stage2Output {
    pub model: Vqcnir,
    pub discriminator: Discriminator,
}

/// Trains the night encoder, AIEM stack, decoder D (with its DBCA blocks)
/// and the discriminator on top of a stage-1 prior. The codebook and `G`
/// are frozen and verified bit-identical every log interval.
///
/// Structural fields of `model_cfg` must match the stage-1 model; its
/// ablation flags and seed are applied.
pub fn train_stage2(
    train: &[Pair],
    val: &[Pair],
    stage1: Vqgan,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<Stage2Output> {
    let structural = |c: &ModelConfig| ModelConfig {
        seed: 0,
        use_aiem: true,
        use_dbca: true,
        use_decoder_d: true,
        ..*c
    };
    if structural(model_cfg) != structural(&stage1.config) {
        return Err(Error::Config(format!(
            "stage-2 model config {model_cfg:?} does not match the stage-1 checkpoint {:?}",
            stage1.config
        )));
    }
    model_cfg.validate()?;
    cfg.validate(model_cfg)?;
    if train.is_empty() {
        return Err(Error::Config("stage 2 needs at least one training pair".into()));
    }

    let e_hq = Encoder::new(&mut rng::stream(model_cfg.seed, 1), model_cfg)?;
    copy_params(&stage1.encoder, &e_hq)?;
    set_trainable(&e_hq, false);
    let mut stage1 = stage1;
    stage1.config = *model_cfg;
    let model = Vqcnir::from_stage1(stage1)?;
    set_trainable(&model.codebook, false);
    set_trainable(&model.decoder_g, false);
    let frozen = model.frozen();
    let reference = snapshot(&frozen);

    let disc = Discriminator::new(&mut rng::stream(model_cfg.seed, 3), model_cfg.base_channels)?;
    let mut opt = Adam::with_lr_scales(model.trainable().into_iter().map(|(name, t)| {
        let scale = if name.contains(".dbca.") { DBCA_LR_SCALE } else { 1.0 };
        (t, scale)
    }));
    let mut opt_d = Adam::new(tensors(named_params(&disc, "")));

    let night: Vec<&ImageRGB> = train.iter().map(|p| &p.degraded).collect();
    let clean: Vec<&ImageRGB> = train.iter().map(|p| &p.clean).collect();
    let sizes: Vec<(usize, usize)> = train.iter().map(|p| (p.clean.width, p.clean.height)).collect();
    let mut data_rng = rng::stream(cfg.seed, 20);
    let w = cfg.weights;
    let use_adv = w.adv != 0.0;

    for it in 1..=cfg.iterations {
        let lr = cfg.lr_at(it - 1);
        let views = draw_views(&mut data_rng, &sizes, cfg)?;
        let x = batch(&night, &views, cfg.crop)?;
        let gt = batch(&clean, &views, cfg.crop)?;
        set_trainable(&disc, false);

        let (z_gt, gt_feats) = no_grad(|| -> Result<_> {
            let enc = e_hq.forward(&gt)?;
            Ok((model.codebook.quantize(&enc.latent)?.quantized, enc.stages))
        })?;
        let out = model.forward(&x)?;
        let restored_feats = e_hq.forward(&out.restored)?.stages;
        let mut l_per = Tensor::scalar(0.0);
        for (a, b) in restored_feats.iter().zip(&gt_feats) {
            l_per = l_per.add(&a.sub(b)?.abs().mean())?;
        }
        let parts = LossParts {
            pix: pixel_loss(&out.restored, &gt)?,
            ca: code_alignment_loss(&out.z_e, &z_gt)?,
            per: l_per,
            adv: if use_adv {
                generator_hinge(&disc, &out.restored)?
            } else {
                Tensor::scalar(0.0)
            },
        };
        let loss = total_loss(&parts, &w)?;
        let loss_v = finite(it, "stage-2 loss", &loss)?;

        opt.zero_grad();
        loss.backward()?;
        opt.step(lr);

        if use_adv {
            set_trainable(&disc, true);
            let dl = discriminator_hinge(&disc, &out.restored.detach(), &gt)?;
            finite(it, "discriminator loss", &dl)?;
            opt_d.zero_grad();
            dl.backward()?;
            opt_d.step(lr);
        }

        if it % cfg.log_interval == 0 || it == cfg.iterations {
            check_frozen(&frozen, &reference)?;
            let psnr_val = if val.is_empty() {
                f64::NAN
            } else {
                infer::evaluate(&model, val)?.psnr
            };
            let rec = LogRecord {
                iter: it,
                loss: loss_v,
                l_pix: parts.pix.item(),
                l_ca: parts.ca.item(),
                l_per: parts.per.item(),
                l_adv: parts.adv.item(),
                lr,
                psnr_val,
            };
            log(&rec.to_string());
        }
    }
    set_trainable(&disc, true);
    Ok(Stage2Output {
        model,
        discriminator: disc,
    })
}

