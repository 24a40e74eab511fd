//! Binary checkpoints.
//!
//! ```text
//! "VQCN" | version u32 | count u32
//! count × (name_len u32 | name | ndim u32 | dims u64… | blob_offset u64)
//! blobs: little-endian f64, contiguous, in entry order
//! ```
//! All integers are little-endian; blob offsets are absolute.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, Vqcnir, Vqgan};
use crate::error::{Error, Result};
use crate::nn::{named_params, Module};

pub const MAGIC: &[u8; 4] = b"VQCN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let header_len: usize = 12 + entries.iter().map(|e| 4 + e.name.len() + 4 + 8 * e.shape.len() + 8).sum::<usize>();
    let mut out = Vec::with_capacity(header_len + entries.iter().map(|e| 8 * e.data.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 8 * e.data.len() as u64;
    }
    for e in entries {
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("checkpoint version {version} unsupported (expected {VERSION})"),
        });
    }
    let count = r.u32("entry count")?;
    let mut heads = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: at as u64 + 4,
                msg: "entry name is not UTF-8".into(),
            })?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let off_at = r.pos;
        let offset = r.u64("blob offset")?;
        heads.push((name, shape, offset, off_at));
    }
    let mut out = Vec::with_capacity(heads.len());
    for (name, shape, offset, off_at) in heads {
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let end = n
            .and_then(|n| n.checked_mul(8))
            .and_then(|len| (offset as usize).checked_add(len))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format {
                offset: off_at as u64,
                msg: format!("blob for `{name}` lies outside the file"),
            })?;
        let data = bytes[offset as usize..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Entry { name, shape, data });
    }
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, entries: &[Entry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

const KIND_VQGAN: f64 = 1.0;
const KIND_VQCNIR: f64 = 2.0;

fn meta_entries(kind: f64, c: &ModelConfig) -> Vec<Entry> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    [
        ("meta.kind", kind),
        ("meta.base_channels", c.base_channels as f64),
        ("meta.num_scales", c.num_scales as f64),
        ("meta.aiem_blocks", c.aiem_blocks as f64),
        ("meta.codebook_size", c.codebook_size as f64),
        ("meta.code_dim", c.code_dim as f64),
        ("meta.dbca_kernel", c.dbca_kernel as f64),
        ("meta.curve_splits", c.curve_splits as f64),
        ("meta.curve_order", c.curve_order as f64),
        ("meta.use_aiem", flag(c.use_aiem)),
        ("meta.use_dbca", flag(c.use_dbca)),
        ("meta.use_decoder_d", flag(c.use_decoder_d)),
    ]
    .into_iter()
    .map(|(name, v)| Entry {
        name: name.into(),
        shape: vec![],
        data: vec![v],
    })
    .collect()
}

fn param_entries(m: &dyn Module, prefix: &str) -> Vec<Entry> {
    named_params(m, prefix)
        .into_iter()
        .map(|(name, t)| Entry {
            name,
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        })
        .collect()
}

struct Loaded {
    map: BTreeMap<String, Entry>,
}

impl Loaded {
    fn new(entries: Vec<Entry>) -> Self {
        Self {
            map: entries.into_iter().map(|e| (e.name.clone(), e)).collect(),
        }
    }

    fn meta(&self, key: &str) -> Result<f64> {
        self.map
            .get(&format!("meta.{key}"))
            .and_then(|e| e.data.first().copied())
            .ok_or_else(|| Error::Format {
                offset: 0,
                msg: format!("checkpoint lacks meta.{key}"),
            })
    }

    fn config(&self, kind: f64) -> Result<ModelConfig> {
        let got = self.meta("kind")?;
        if got != kind {
            return Err(Error::Format {
                offset: 0,
                msg: format!("checkpoint holds model kind {got}, expected {kind}"),
            });
        }
        let u = |k: &str| self.meta(k).map(|v| v as usize);
        let b = |k: &str| self.meta(k).map(|v| v != 0.0);
        Ok(ModelConfig {
            base_channels: u("base_channels")?,
            num_scales: u("num_scales")?,
            aiem_blocks: u("aiem_blocks")?,
            codebook_size: u("codebook_size")?,
            code_dim: u("code_dim")?,
            dbca_kernel: u("dbca_kernel")?,
            curve_splits: u("curve_splits")?,
            curve_order: u("curve_order")?,
            seed: 0,
            use_aiem: b("use_aiem")?,
            use_dbca: b("use_dbca")?,
            use_decoder_d: b("use_decoder_d")?,
        })
    }

    fn fill(&self, m: &dyn Module, prefix: &str) -> Result<()> {
        let mut err = None;
        m.visit_params(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.map.get(name) {
                Some(e) if e.shape == t.shape() => t.data_mut().copy_from_slice(&e.data),
                Some(e) => {
                    err = Some(Error::Format {
                        offset: 0,
                        msg: format!("`{name}` has shape {:?} in checkpoint, model expects {:?}", e.shape, t.shape()),
                    })
                }
                None => {
                    err = Some(Error::Format {
                        offset: 0,
                        msg: format!("checkpoint lacks parameter `{name}`"),
                    })
                }
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub fn vqgan_entries(m: &Vqgan) -> Vec<Entry> {
    let mut out = meta_entries(KIND_VQGAN, &m.config);
    out.extend(param_entries(m, ""));
    out
}

pub fn vqcnir_entries(m: &Vqcnir, extra: &[(&str, &dyn Module)]) -> Vec<Entry> {
    let mut out = meta_entries(KIND_VQCNIR, &m.config);
    out.extend(param_entries(m, ""));
    for (prefix, module) in extra {
        out.extend(param_entries(*module, prefix));
    }
    out
}

pub fn save_vqgan(m: &Vqgan, path: impl AsRef<Path>) -> Result<()> {
    write(path, &vqgan_entries(m))
}

pub fn save_vqcnir(m: &Vqcnir, extra: &[(&str, &dyn Module)], path: impl AsRef<Path>) -> Result<()> {
    write(path, &vqcnir_entries(m, extra))
}

pub fn vqgan_from_entries(entries: Vec<Entry>) -> Result<Vqgan> {
    let l = Loaded::new(entries);
    let m = Vqgan::new(l.config(KIND_VQGAN)?)?;
    l.fill(&m, "")?;
    Ok(m)
}

pub fn vqcnir_from_entries(entries: Vec<Entry>) -> Result<Vqcnir> {
    let l = Loaded::new(entries);
    let m = Vqcnir::new(l.config(KIND_VQCNIR)?)?;
    l.fill(&m, "")?;
    Ok(m)
}

pub fn load_vqgan(path: impl AsRef<Path>) -> Result<Vqgan> {
    vqgan_from_entries(read(path)?)
}

pub fn load_vqcnir(path: impl AsRef<Path>) -> Result<Vqcnir> {
    vqcnir_from_entries(read(path)?)
}

/// Loads the `prefix`-named parameters of an auxiliary module.
pub fn fill_module(entries: Vec<Entry>, m: &dyn Module, prefix: &str) -> Result<()> {
    Loaded::new(entries).fill(m, prefix)
}
