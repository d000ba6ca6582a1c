//! Binary checkpoint format for parameter registries.
//!
//! Layout (all integers little-endian): a 4-byte magic, a format version,
//! a string-to-string metadata block, then each parameter as name, shape
//! and raw `f64` bits. Values round-trip bit-exactly.

use super::ParamRegistry;
use crate::autodiff::Tensor;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TJCK";
const FORMAT_VERSION: u32 = 1;
/// Upper bound on any single length field; a corrupt file must not drive
/// allocation sizes.
const SANE_LEN: usize = 1 << 28;

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub registry: ParamRegistry,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &BTreeMap<String, String>,
    registry: &ParamRegistry,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;

    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (k, v) in meta {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }

    w.write_all(&(registry.tensor_count() as u32).to_le_bytes())?;
    for p in registry.iter() {
        write_str(&mut w, &p.name)?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for d in p.value.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "checkpoint format version {version} unsupported (expected {FORMAT_VERSION})"
        )));
    }

    let n_meta = read_u32(&mut r)? as usize;
    if n_meta > SANE_LEN {
        return Err(Error::Validation("checkpoint metadata count is implausible".into()));
    }
    let mut meta = BTreeMap::new();
    for _ in 0..n_meta {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        meta.insert(k, v);
    }

    let n_params = read_u32(&mut r)? as usize;
    if n_params > SANE_LEN {
        return Err(Error::Validation("checkpoint parameter count is implausible".into()));
    }
    let mut registry = ParamRegistry::new();
    for _ in 0..n_params {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 2 {
            return Err(Error::Validation(format!("parameter {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > SANE_LEN {
            return Err(Error::Validation(format!("parameter {name} has implausible size")));
        }
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        registry.register(&name, Tensor::from_shape(shape, data)?)?;
    }

    // Anything after the declared parameters means the file was not written
    // by this format.
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => Ok(Checkpoint { meta, registry }),
        _ => Err(Error::Validation("checkpoint has trailing bytes".into())),
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > SANE_LEN {
        return Err(Error::Validation("checkpoint string length is implausible".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| Error::Validation("checkpoint contains invalid UTF-8".into()))
}

impl Checkpoint {
    /// Convenience accessor: metadata value or a validation error naming it.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Validation(format!("checkpoint metadata lacks {key:?}")))
    }
}
