//! The restoration network, its losses, optimizer, checkpoints and the
//! two training stages.

pub mod checkpoint;
pub mod infer;
pub mod loss;
mod network;
pub mod optim;
pub mod train;

pub use loss::{adversarial_loss, perceptual_loss, pixel_loss, total_loss, LossParts, LossWeights};
pub use network::{
    DecoderD, DecoderG, Discriminator, Encoder, EncoderOutput, PriorOutput, Reconstruction, Restoration, UpStage,
    Vqcnir, Vqgan,
};
pub use optim::{multistep_lr, Adam};
pub use train::{train_stage1, train_stage2, LogRecord, Stage2Output, TrainConfig};

use crate::aiem::{HieConfig, ImaConvConfig};
use crate::error::{Error, Result};

/// Components an ablation run can replace by identity pass-through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Aiem,
    Dbca,
    DecoderD,
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aiem" => Ok(Component::Aiem),
            "dbca" => Ok(Component::Dbca),
            "decoder_d" => Ok(Component::DecoderD),
            other => Err(Error::Config(format!("unknown component `{other}` (aiem, dbca, decoder_d)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Number of stride-2 encoder stages.
    pub num_scales: usize,
    pub aiem_blocks: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub dbca_kernel: usize,
    pub curve_splits: usize,
    pub curve_order: usize,
    pub seed: u64,
    pub use_aiem: bool,
    pub use_dbca: bool,
    pub use_decoder_d: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            num_scales: 3,
            aiem_blocks: 2,
            codebook_size: 256,
            code_dim: 64,
            dbca_kernel: 3,
            curve_splits: 4,
            curve_order: 4,
            seed: 0,
            use_aiem: true,
            use_dbca: true,
            use_decoder_d: true,
        }
    }
}

impl ModelConfig {
    /// Width at scale `l` (resolution `1/2^l`).
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels * (1usize << l.min(2))
    }

    /// Spatial side lengths must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.num_scales
    }

    pub fn disable(&mut self, c: Component) {
        match c {
            Component::Aiem => self.use_aiem = false,
            Component::Dbca => self.use_dbca = false,
            Component::DecoderD => self.use_decoder_d = false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scales < 2 {
            return Err(Error::Config(format!("num_scales must be >= 2, got {}", self.num_scales)));
        }
        if self.num_scales > 8 {
            return Err(Error::Config(format!("num_scales {} is unreasonably deep", self.num_scales)));
        }
        if self.base_channels == 0 || self.code_dim == 0 || self.codebook_size == 0 {
            return Err(Error::Config("base_channels, code_dim and codebook_size must be >= 1".into()));
        }
        if self.dbca_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("dbca_kernel must be odd, got {}", self.dbca_kernel)));
        }
        if self.aiem_blocks > 0 {
            ImaConvConfig::new(self.code_dim, self.curve_splits, self.curve_order).validate()?;
            HieConfig::new(self.code_dim).validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_schedule_caps_at_four() {
        let c = ModelConfig::default();
        assert_eq!((0..5).map(|l| c.channels(l)).collect::<Vec<_>>(), vec![16, 32, 64, 64, 64]);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            num_scales: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            code_dim: 18,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn component_names() {
        assert_eq!("dbca".parse::<Component>().unwrap(), Component::Dbca);
        assert!("head".parse::<Component>().is_err());
    }
}
