//! Training objectives.

use super::{Discriminator, Encoder};
use crate::error::Result;
use crate::tensor::Tensor;

/// Mean absolute error.
pub fn pixel_loss(restored: &Tensor, gt: &Tensor) -> Result<Tensor> {
    Ok(restored.sub(gt)?.abs().mean())
}

/// Sum over encoder stages of the mean L1 distance between features.
pub fn perceptual_loss(restored: &Tensor, gt: &Tensor, extractor: &Encoder) -> Result<Tensor> {
    restored.same_shape(gt, "perceptual_loss")?;
    let fa = extractor.forward(restored)?.stages;
    let fb = extractor.forward(gt)?.stages;
    let mut total = Tensor::scalar(0.0);
    for (a, b) in fa.iter().zip(&fb) {
        total = total.add(&a.sub(b)?.abs().mean())?;
    }
    Ok(total)
}

/// Hinge losses `(g_loss, d_loss)`. The discriminator term sees `restored`
/// detached, so it never pushes gradient into the generator.
pub fn adversarial_loss(disc: &Discriminator, restored: &Tensor, gt: &Tensor) -> Result<(Tensor, Tensor)> {
    let g = generator_hinge(disc, restored)?;
    let d = discriminator_hinge(disc, &restored.detach(), gt)?;
    Ok((g, d))
}

pub fn generator_hinge(disc: &Discriminator, restored: &Tensor) -> Result<Tensor> {
    Ok(disc.forward(restored)?.mean().neg())
}

pub fn discriminator_hinge(disc: &Discriminator, fake: &Tensor, real: &Tensor) -> Result<Tensor> {
    let real_term = disc.forward(real)?.neg().add_scalar(1.0).relu().mean();
    let fake_term = disc.forward(fake)?.add_scalar(1.0).relu().mean();
    real_term.add(&fake_term)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pix: f64,
    pub ca: f64,
    pub per: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pix: 1.0,
            ca: 1.0,
            per: 1.0,
            adv: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossParts {
    pub pix: Tensor,
    pub ca: Tensor,
    pub per: Tensor,
    pub adv: Tensor,
}

impl LossParts {
    pub fn from_values(pix: f64, ca: f64, per: f64, adv: f64) -> Self {
        Self {
            pix: Tensor::scalar(pix),
            ca: Tensor::scalar(ca),
            per: Tensor::scalar(per),
            adv: Tensor::scalar(adv),
        }
    }
}

/// `λ_pix·L_pix + λ_ca·L_ca + λ_per·L_per + λ_adv·L_adv`, summed left to right.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<Tensor> {
    parts
        .pix
        .mul_scalar(w.pix)
        .add(&parts.ca.mul_scalar(w.ca))?
        .add(&parts.per.mul_scalar(w.per))?
        .add(&parts.adv.mul_scalar(w.adv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::Module;
    use crate::rng;
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 3);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| r.random_range(0.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn pixel_loss_cases() {
        let a = random(&[2, 3, 4, 4], 1);
        assert_eq!(pixel_loss(&a, &a).unwrap().item(), 0.0);
        let shifted = a.add_scalar(0.5);
        assert!((pixel_loss(&shifted, &a).unwrap().item() - 0.5).abs() < 1e-15);
        assert!(pixel_loss(&a, &random(&[2, 3, 4, 5], 2)).is_err());
    }

    #[test]
    fn default_weights_sum_to_three_point_one() {
        let t = total_loss(&LossParts::from_values(1.0, 1.0, 1.0, 1.0), &LossWeights::default()).unwrap();
        assert_eq!(t.item(), 3.1);
        let zero = LossWeights {
            pix: 0.0,
            ca: 0.0,
            per: 0.0,
            adv: 0.0,
        };
        assert_eq!(total_loss(&LossParts::from_values(3.0, 1.0, 2.0, 5.0), &zero).unwrap().item(), 0.0);
    }

    #[test]
    fn zero_discriminator_hinge() {
        let cfg = ModelConfig::default();
        let mut r = rng::stream(0, 0);
        let disc = Discriminator::new(&mut r, cfg.base_channels).unwrap();
        disc.visit_params("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let (g, d) = adversarial_loss(&disc, &random(&[1, 3, 16, 16], 4), &random(&[1, 3, 16, 16], 5)).unwrap();
        assert_eq!(g.item(), 0.0);
        assert_eq!(d.item(), 2.0);
    }

    #[test]
    fn perceptual_is_symmetric_and_zero_on_identity() {
        let cfg = ModelConfig {
            base_channels: 4,
            code_dim: 8,
            ..Default::default()
        };
        let mut r = rng::stream(0, 0);
        let enc = Encoder::new(&mut r, &cfg).unwrap();
        let a = random(&[1, 3, 16, 16], 6);
        let b = random(&[1, 3, 16, 16], 7);
        assert_eq!(perceptual_loss(&a, &a, &enc).unwrap().item(), 0.0);
        let ab = perceptual_loss(&a, &b, &enc).unwrap().item();
        let ba = perceptual_loss(&b, &a, &enc).unwrap().item();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() <= 1e-15 * ab.abs().max(1.0));
    }
}
