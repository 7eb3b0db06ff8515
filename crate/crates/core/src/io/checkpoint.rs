//! `FFCK` checkpoints: named f64 matrices, the model config and a trailing
//! CRC32 over every preceding byte.

use std::path::Path;

use super::config_file::{parse_model_config, render_model_config};
use super::{atomic_write, Reader};
use crate::error::{Error, Result};
use crate::model::FaceFormer;
use crate::tensor::{Matrix, Parameters};

const MAGIC: &[u8; 4] = b"FFCK";
const VERSION: u32 = 1;

/// Entry holding the model config as UTF-8 bytes, one byte per element.
pub const CONFIG_ENTRY: &str = "__config__";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    /// `(name, rows, cols)` of every entry, including the config entry.
    pub entries: Vec<(String, usize, usize)>,
    pub crc: u32,
}

fn push_entry(out: &mut Vec<u8>, name: &str, m: &Matrix) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("entry name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn write_checkpoint(model: &FaceFormer) -> Result<Vec<u8>> {
    let cfg_bytes = render_model_config(&model.config).into_bytes();
    let cfg_entry = Matrix::from_vec(1, cfg_bytes.len(), cfg_bytes.iter().map(|&b| b as f64).collect())?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((model.params.len() + 1) as u32).to_le_bytes());
    push_entry(&mut out, CONFIG_ENTRY, &cfg_entry)?;
    for (name, m) in model.params.iter() {
        push_entry(&mut out, name, m)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn verified_body(bytes: &[u8]) -> Result<(&[u8], u32)> {
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if &body[..4] != MAGIC {
        return Err(Error::Format("not an FFCK checkpoint (bad magic)".into()));
    }
    Ok((body, stored))
}

fn parse_entries(body: &[u8]) -> Result<(u32, Vec<(String, Matrix)>)> {
    let mut r = Reader::new(body, "FFCK");
    r.take(4)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_owned();
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let len = rows.checked_mul(cols).and_then(|x| x.checked_mul(8)).ok_or_else(|| {
            Error::Format(format!("entry `{name}` has an impossible size"))
        })?;
        let data = r.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint entries", r.remaining())));
    }
    Ok((version, entries))
}

/// Header listing without reconstructing the model.
pub fn inspect_checkpoint(bytes: &[u8]) -> Result<CheckpointHeader> {
    let (body, crc) = verified_body(bytes)?;
    let (version, entries) = parse_entries(body)?;
    Ok(CheckpointHeader {
        version,
        entries: entries.into_iter().map(|(n, m)| (n, m.rows(), m.cols())).collect(),
        crc,
    })
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<FaceFormer> {
    let (body, _) = verified_body(bytes)?;
    let (_, entries) = parse_entries(body)?;
    let mut config = None;
    let mut params = Parameters::new();
    for (name, m) in entries {
        if name == CONFIG_ENTRY {
            let text: Vec<u8> = m
                .as_slice()
                .iter()
                .map(|&v| u8::try_from(v as i64).ok().filter(|&b| b as f64 == v))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Format("config entry is not a byte string".into()))?;
            let text = String::from_utf8(text).map_err(|_| Error::Format("config entry is not UTF-8".into()))?;
            config = Some(parse_model_config(&text)?);
        } else {
            params
                .insert(name, m)
                .map_err(|e| Error::Format(format!("checkpoint entries: {e}")))?;
        }
    }
    let config = config.ok_or_else(|| Error::Format(format!("checkpoint lacks the `{CONFIG_ENTRY}` entry")))?;
    FaceFormer::from_parameters(config, params)
}

pub fn save_checkpoint(path: &Path, model: &FaceFormer) -> Result<()> {
    atomic_write(path, &write_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<FaceFormer> {
    read_checkpoint(&std::fs::read(path)?)
}
