//! On-disk formats and dataset layout.

mod checkpoint;
mod config_file;
mod dataset;
mod matrix_file;
mod wav;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{inspect_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CONFIG_ENTRY};
pub use config_file::{parse_model_config, parse_run_config, render_run_config, render_model_config, RunConfig, MODEL_KEYS, TRAIN_KEYS};
pub use dataset::{load_audio, load_dataset, write_manifest, ManifestEntry, MANIFEST};
pub use matrix_file::{load_matrix, read_matrix, save_matrix, write_matrix, MatrixHeader};
pub use wav::{load_wav, read_wav, save_wav, write_wav};

use crate::error::Result;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            crate::Error::Format(format!("{}: truncated at byte {}", self.what, self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
