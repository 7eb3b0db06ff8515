//! 16-bit mono PCM WAV, the only accepted waveform container.

use std::path::Path;

use super::{atomic_write, Reader};
use crate::error::{Error, Result};

/// Decodes samples scaled to [-1, 1) and the sample rate.
pub fn read_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    let mut r = Reader::new(bytes, "WAV");
    if r.take(4)? != b"RIFF" {
        return Err(Error::Format("not a RIFF file".into()));
    }
    r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(Error::Format("RIFF file is not WAVE".into()));
    }
    let mut rate = None;
    loop {
        let id = r.take(4)?;
        let size = r.u32()? as usize;
        match id {
            b"fmt " => {
                let fmt = r.take(size)?;
                if size < 16 {
                    return Err(Error::Format("short fmt chunk".into()));
                }
                let tag = u16::from_le_bytes([fmt[0], fmt[1]]);
                let channels = u16::from_le_bytes([fmt[2], fmt[3]]);
                let bits = u16::from_le_bytes([fmt[14], fmt[15]]);
                if tag != 1 || channels != 1 || bits != 16 {
                    return Err(Error::Format(format!(
                        "only 16-bit mono PCM is supported (format {tag}, {channels} channels, {bits} bits)"
                    )));
                }
                rate = Some(u32::from_le_bytes(fmt[4..8].try_into().unwrap()));
            }
            b"data" => {
                let rate = rate.ok_or_else(|| Error::Format("data chunk before fmt chunk".into()))?;
                let samples = r
                    .take(size)?
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok((samples, rate));
            }
            _ => {
                r.take(size + size % 2)?;
            }
        }
        if size % 2 == 1 && id == b"fmt " {
            r.take(1)?;
        }
    }
}

/// Encodes samples in [-1, 1] (clamped) as 16-bit mono PCM.
pub fn write_wav(samples: &[f64], rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn load_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    read_wav(&std::fs::read(path)?)
}

pub fn save_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    atomic_write(path, &write_wav(samples, rate))
}
