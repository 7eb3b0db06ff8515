//! Dataset directories: a `manifest.txt` listing `identity audio motion`
//! per line, paths relative to the directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{atomic_write, load_matrix, load_wav};
use crate::config::ModelConfig;
use crate::decoder::MotionSequence;
use crate::encoder::AudioInput;
use crate::error::{Error, Result};
use crate::training::TrainingSample;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub identity: usize,
    pub audio: PathBuf,
    pub motion: PathBuf,
}

pub fn write_manifest(dir: &Path, header: &str, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::new();
    for line in header.lines() {
        let _ = writeln!(s, "# {line}");
    }
    for e in entries {
        let _ = writeln!(s, "{} {} {}", e.identity, e.audio.display(), e.motion.display());
    }
    atomic_write(&dir.join(MANIFEST), s.as_bytes())
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, audio, motion] = fields[..] else {
            return Err(Error::Format(format!("manifest line {}: want `identity audio motion`", n + 1)));
        };
        let identity = id.parse().map_err(|_| Error::Format(format!("manifest line {}: bad identity `{id}`", n + 1)))?;
        out.push(ManifestEntry { identity, audio: audio.into(), motion: motion.into() });
    }
    Ok(out)
}

/// Loads audio as a waveform for `.wav` files and as `f_a`-rate features
/// otherwise.
pub fn load_audio(path: &Path, cfg: &ModelConfig) -> Result<AudioInput> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        let (samples, rate) = load_wav(path)?;
        Ok(AudioInput::Waveform { samples, sample_rate: rate as f64 })
    } else {
        Ok(AudioInput::features(load_matrix(path)?, cfg.audio_rate))
    }
}

pub fn load_dataset(dir: &Path, cfg: &ModelConfig) -> Result<Vec<TrainingSample>> {
    let entries = parse_manifest(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    if entries.is_empty() {
        return Err(Error::Format(format!("{} lists no samples", dir.join(MANIFEST).display())));
    }
    entries
        .into_iter()
        .map(|e| {
            Ok(TrainingSample {
                audio: load_audio(&dir.join(&e.audio), cfg)?,
                motion: MotionSequence::new(load_matrix(&dir.join(&e.motion))?, cfg.motion_rate)?,
                identity: e.identity,
            })
        })
        .collect()
}
