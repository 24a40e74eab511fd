//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Keys are grouped by prefix
//! (`model.`, `train.`, `data.`, `degrade.`). Absent keys keep their
//! defaults; unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{degrade, generate_clean, load_ppm, manifest, BlurKernel, DegradationParams, ImageRGB, Pair};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::rng;

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Manifest of training pairs; synthetic data is generated when absent.
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub count: usize,
    pub val_count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            val_manifest: None,
            count: 200,
            val_count: 16,
            size: 64,
            seed: 0,
        }
    }
}

const DEGRADE_SALT: u64 = 0x0064_6567_7261_6465;

/// Degradation settings for synthesized pairs. Unset fields are drawn per
/// image; `seed` is the base from which per-image seeds are derived.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DegradationSpec {
    pub exposure: Option<f64>,
    pub gamma: Option<f64>,
    pub kernel: Option<BlurKernel>,
    pub noise_sigma: Option<f64>,
    pub seed: u64,
}

impl DegradationSpec {
    /// Seed recorded for image `index`. Salted so that equal data and
    /// degradation seeds do not reuse the clean generator's streams.
    pub fn image_seed(&self, index: usize) -> u64 {
        rng::child_seed(rng::child_seed(self.seed, DEGRADE_SALT), index as u64)
    }

    /// Parameters for one image: a fresh draw with the fixed fields applied.
    pub fn params(&self, image_seed: u64) -> Result<DegradationParams> {
        let p = DegradationParams::sample(image_seed);
        DegradationParams::new(
            self.exposure.unwrap_or(p.exposure),
            self.gamma.unwrap_or(p.gamma),
            self.kernel.unwrap_or(p.kernel),
            self.noise_sigma.unwrap_or(p.noise_sigma),
            p.seed,
        )
    }

    pub fn degrade_all(&self, clean: &[ImageRGB], first_index: usize) -> Result<Vec<Pair>> {
        clean
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let params = self.params(self.image_seed(first_index + i))?;
                Ok(Pair {
                    degraded: degrade(c, &params),
                    clean: c.clone(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub degrade: DegradationSpec,
    /// Keys given explicitly in the parsed text.
    pub explicit: BTreeSet<String>,
}

pub const KEYS: &[&str] = &[
    "model.base_channels",
    "model.num_scales",
    "model.aiem_blocks",
    "model.codebook_size",
    "model.code_dim",
    "model.dbca_kernel",
    "model.curve_splits",
    "model.curve_order",
    "model.seed",
    "model.use_aiem",
    "model.use_dbca",
    "model.use_decoder_d",
    "train.iterations",
    "train.batch_size",
    "train.crop",
    "train.lr",
    "train.milestones",
    "train.decay",
    "train.seed",
    "train.log_interval",
    "train.weight_pix",
    "train.weight_ca",
    "train.weight_per",
    "train.weight_adv",
    "train.stage1_adv_weight",
    "train.stage1_adv_start",
    "train.augment",
    "data.train_manifest",
    "data.val_manifest",
    "data.count",
    "data.val_count",
    "data.size",
    "data.seed",
    "degrade.exposure",
    "degrade.gamma",
    "degrade.kernel",
    "degrade.noise_sigma",
    "degrade.seed",
];

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(s.trim())).collect()
}

fn opt<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if v == "random" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

/// `gaussian:<sigma>` or `motion:<length>:<angle>`.
pub fn parse_kernel(v: &str) -> std::result::Result<BlurKernel, String> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.as_slice() {
        ["gaussian", s] => Ok(BlurKernel::Gaussian { sigma: num(s)? }),
        ["motion", l, a] => Ok(BlurKernel::Motion {
            length: num(l)?,
            angle: num(a)?,
        }),
        _ => Err(format!("expected gaussian:<sigma> or motion:<length>:<angle>, got `{v}`")),
    }
}

fn kernel_str(k: &BlurKernel) -> String {
    match k {
        BlurKernel::Identity => "identity".into(),
        BlurKernel::Gaussian { sigma } => format!("gaussian:{sigma}"),
        BlurKernel::Motion { length, angle } => format!("motion:{length}:{angle}"),
    }
}

fn show_opt<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map_or_else(|| "random".to_string(), f)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |key: &str, msg: String| Error::ConfigKey {
                path: path.to_string(),
                line,
                key: key.to_string(),
                msg,
            };
            let Some((key, value)) = body.split_once('=') else {
                return Err(err(body, "expected `key = value`".into()));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(key, "unknown key".into()));
            }
            if !cfg.explicit.insert(key.to_string()) {
                return Err(err(key, "key given twice".into()));
            }
            cfg.set(key, value).map_err(|m| err(key, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train_manifest, &mut cfg.data.val_manifest].into_iter().flatten() {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (m, t, d, g) = (&mut self.model, &mut self.train, &mut self.data, &mut self.degrade);
        match key {
            "model.base_channels" => m.base_channels = num(v)?,
            "model.num_scales" => m.num_scales = num(v)?,
            "model.aiem_blocks" => m.aiem_blocks = num(v)?,
            "model.codebook_size" => m.codebook_size = num(v)?,
            "model.code_dim" => m.code_dim = num(v)?,
            "model.dbca_kernel" => m.dbca_kernel = num(v)?,
            "model.curve_splits" => m.curve_splits = num(v)?,
            "model.curve_order" => m.curve_order = num(v)?,
            "model.seed" => m.seed = num(v)?,
            "model.use_aiem" => m.use_aiem = boolean(v)?,
            "model.use_dbca" => m.use_dbca = boolean(v)?,
            "model.use_decoder_d" => m.use_decoder_d = boolean(v)?,
            "train.iterations" => t.iterations = num(v)?,
            "train.batch_size" => t.batch_size = num(v)?,
            "train.crop" => t.crop = num(v)?,
            "train.lr" => t.lr = num(v)?,
            "train.milestones" => t.milestones = list(v)?,
            "train.decay" => t.decay = num(v)?,
            "train.seed" => t.seed = num(v)?,
            "train.log_interval" => t.log_interval = num(v)?,
            "train.weight_pix" => t.weights.pix = num(v)?,
            "train.weight_ca" => t.weights.ca = num(v)?,
            "train.weight_per" => t.weights.per = num(v)?,
            "train.weight_adv" => t.weights.adv = num(v)?,
            "train.stage1_adv_weight" => t.stage1_adv_weight = num(v)?,
            "train.stage1_adv_start" => t.stage1_adv_start = num(v)?,
            "train.augment" => t.augment = boolean(v)?,
            "data.train_manifest" => d.train_manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.val_manifest" => d.val_manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.count" => d.count = num(v)?,
            "data.val_count" => d.val_count = num(v)?,
            "data.size" => d.size = num(v)?,
            "data.seed" => d.seed = num(v)?,
            "degrade.exposure" => g.exposure = opt(v, num)?,
            "degrade.gamma" => g.gamma = opt(v, num)?,
            "degrade.kernel" => g.kernel = opt(v, parse_kernel)?,
            "degrade.noise_sigma" => g.noise_sigma = opt(v, num)?,
            "degrade.seed" => g.seed = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Current value of `key` in config-file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t, d, g) = (&self.model, &self.train, &self.data, &self.degrade);
        Some(match key {
            "model.base_channels" => m.base_channels.to_string(),
            "model.num_scales" => m.num_scales.to_string(),
            "model.aiem_blocks" => m.aiem_blocks.to_string(),
            "model.codebook_size" => m.codebook_size.to_string(),
            "model.code_dim" => m.code_dim.to_string(),
            "model.dbca_kernel" => m.dbca_kernel.to_string(),
            "model.curve_splits" => m.curve_splits.to_string(),
            "model.curve_order" => m.curve_order.to_string(),
            "model.seed" => m.seed.to_string(),
            "model.use_aiem" => m.use_aiem.to_string(),
            "model.use_dbca" => m.use_dbca.to_string(),
            "model.use_decoder_d" => m.use_decoder_d.to_string(),
            "train.iterations" => t.iterations.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.crop" => t.crop.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.milestones" => t.milestones.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "train.decay" => t.decay.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.log_interval" => t.log_interval.to_string(),
            "train.weight_pix" => t.weights.pix.to_string(),
            "train.weight_ca" => t.weights.ca.to_string(),
            "train.weight_per" => t.weights.per.to_string(),
            "train.weight_adv" => t.weights.adv.to_string(),
            "train.stage1_adv_weight" => t.stage1_adv_weight.to_string(),
            "train.stage1_adv_start" => t.stage1_adv_start.to_string(),
            "train.augment" => t.augment.to_string(),
            "data.train_manifest" => show_path(&d.train_manifest),
            "data.val_manifest" => show_path(&d.val_manifest),
            "data.count" => d.count.to_string(),
            "data.val_count" => d.val_count.to_string(),
            "data.size" => d.size.to_string(),
            "data.seed" => d.seed.to_string(),
            "degrade.exposure" => show_opt(&g.exposure, f64::to_string),
            "degrade.gamma" => show_opt(&g.gamma, f64::to_string),
            "degrade.kernel" => show_opt(&g.kernel, kernel_str),
            "degrade.noise_sigma" => show_opt(&g.noise_sigma, f64::to_string),
            "degrade.seed" => g.seed.to_string(),
            _ => return None,
        })
    }

    /// One `key = value` line per setting, defaults marked.
    pub fn echo(&self) -> Vec<String> {
        KEYS.iter()
            .map(|k| {
                let v = self.get(k).unwrap_or_default();
                if self.explicit.contains(*k) {
                    format!("{k} = {v}")
                } else {
                    format!("{k} = {v}  # default")
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        if self.data.size < self.train.crop {
            return Err(Error::Config(format!(
                "data.size {} is smaller than train.crop {}",
                self.data.size, self.train.crop
            )));
        }
        if self.data.val_count == 0 && self.data.val_manifest.is_none() {
            return Err(Error::Config("data.val_count must be >= 1 without a validation manifest".into()));
        }
        if self.degrade.exposure.is_some() || self.degrade.gamma.is_some() || self.degrade.kernel.is_some() || self.degrade.noise_sigma.is_some() {
            self.degrade.params(self.degrade.image_seed(0))?;
        }
        Ok(())
    }

    /// Training and validation pairs from the manifests, or synthesized.
    pub fn pairs(&self) -> Result<(Vec<Pair>, Vec<Pair>)> {
        let (mut train, mut val) = match (&self.data.train_manifest, &self.data.val_manifest) {
            (Some(_), Some(_)) => (Vec::new(), Vec::new()),
            _ => self.synthetic_pairs()?,
        };
        if let Some(p) = &self.data.train_manifest {
            train = load_pairs(p)?;
        }
        if let Some(p) = &self.data.val_manifest {
            val = load_pairs(p)?;
        }
        Ok((train, val))
    }

    /// Synthetic train and validation pairs. Validation images continue the
    /// training sequence so the two sets never overlap.
    pub fn synthetic_pairs(&self) -> Result<(Vec<Pair>, Vec<Pair>)> {
        let d = &self.data;
        let clean = generate_clean(d.count + d.val_count, d.size, d.seed);
        let pairs = self.degrade.degrade_all(&clean, 0)?;
        let (train, val) = pairs.split_at(d.count);
        Ok((train.to_vec(), val.to_vec()))
    }
}

/// Reads every pair listed in a manifest.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    manifest::read(path)?
        .iter()
        .map(|r| {
            let pair = Pair {
                clean: load_ppm(&r.clean)?,
                degraded: load_ppm(&r.degraded)?,
            };
            if !pair.clean.same_size(&pair.degraded) {
                return Err(Error::Config(format!(
                    "{} and {} differ in size",
                    r.clean.display(),
                    r.degraded.display()
                )));
            }
            Ok(pair)
        })
        .collect()
}
