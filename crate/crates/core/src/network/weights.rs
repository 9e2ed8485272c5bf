//! Binary weight files.
//!
//! Little-endian throughout: magic `MCWW`, `u32` version, `u32` entry count,
//! then per entry a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u32` dims and the values as `f32`. The configuration lives next to the
//! weights in a TOML sidecar.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::{Model, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: [u8; 4] = *b"MCWW";
pub const WEIGHT_VERSION: u32 = 1;

/// `weights.bin` -> `weights.toml`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("toml")
}

pub fn write_weights(params: &IndexMap<String, Tensor>, mut w: impl Write) -> Result<()> {
    if params.is_empty() {
        return Err(Error::EmptyWeights);
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&WEIGHT_MAGIC);
    buf.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        let len = u16::try_from(name.len()).map_err(|_| Error::WeightMismatch {
            name: name.clone(),
            msg: "name longer than 65535 bytes".into(),
        })?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.data.len() < n {
            return Err(Error::Truncated(what));
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a whole weight file.
pub fn read_weights(mut r: impl Read) -> Result<IndexMap<String, Tensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { data: &bytes };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if magic != WEIGHT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = c.u32("version")?;
    if version != WEIGHT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = c.u32("entry count")? as usize;
    if count == 0 {
        return Err(Error::EmptyWeights);
    }
    let mut out = IndexMap::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::WeightMismatch {
                name: "<unreadable>".into(),
                msg: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::WeightMismatch {
                name,
                msg: format!("rank {rank} outside 1..=4"),
            });
        }
        let shape = (0..rank).map(|_| c.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(Error::Truncated("values"))?, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(&shape, data)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::WeightMismatch {
                name,
                msg: "duplicate entry".into(),
            });
        }
    }
    Ok(out)
}

/// Writes the weights to `path` and the configuration to its sidecar.
pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(&model.params, &mut buf)?;
    fs::write(path, buf)?;
    model.config.save(&sidecar_path(path))
}

/// Loads weights from `path`. The configuration comes from `config` when
/// given, otherwise from the sidecar. The result always matches the
/// configuration's layout.
pub fn load_weights(path: &Path, config: Option<&NetworkConfig>) -> Result<Model> {
    let params = read_weights(fs::File::open(path)?)?;
    let config = match config {
        Some(c) => c.clone(),
        None => NetworkConfig::load(&sidecar_path(path))?,
    };
    let model = Model { config, params };
    model.check_layout()?;
    Ok(model)
}
