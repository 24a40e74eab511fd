//! `clean<TAB>degraded<TAB>seed` pair lists. Relative paths resolve against
//! the manifest's directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub seed: u64,
}

pub fn parse(text: &str, base: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format {
                offset: here as u64,
                msg: format!("manifest record needs 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let seed = fields[2].trim().parse().map_err(|_| Error::Format {
            offset: (here + fields[0].len() + fields[1].len() + 2) as u64,
            msg: format!("invalid seed `{}`", fields[2]),
        })?;
        out.push(Record {
            clean: base.join(fields[0]),
            degraded: base.join(fields[1]),
            seed,
        });
    }
    Ok(out)
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path.parent().unwrap_or(Path::new("")))
}

/// Writes records with paths as given (callers pass them relative to the manifest).
pub fn write(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let text: String = records
        .iter()
        .map(|r| format!("{}\t{}\t{}\n", r.clean.display(), r.degraded.display(), r.seed))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
