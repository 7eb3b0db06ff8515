//! Deterministic synthetic corpus with a known, learnable audio-to-motion
//! mapping.
//!
//! For a sequence of `T` motion frames the audio is a `T′ × d_a` matrix,
//! `T′ = round(T·f_a/f_m)`, whose columns are sums of three low-frequency
//! sinusoids with random amplitude, frequency and phase. Motion is built as
//!
//! ```text
//! Y = S · R · X · W + 1 · o_n
//! ```
//!
//! where `R` linearly resamples `T′` rows to `T`, `S` is a centered moving
//! average of width 3 (truncated at the ends), `W` is a fixed `d_a × 3V`
//! readout and `o_n` is the offset pattern of identity `n`. All draws come
//! from one ChaCha8 stream seeded by `seed`: first `W`, then the offsets,
//! then the audio of each sequence in order.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::MotionSequence;
use crate::encoder::{resample_linear, AudioInput};
use crate::error::{Error, Result};
use crate::io::{save_matrix, write_manifest, ManifestEntry};
use crate::tensor::Matrix;
use crate::training::TrainingSample;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    /// Sequences per identity.
    pub sequences: usize,
    pub frames: usize,
    pub vertices: usize,
    pub feature_dim: usize,
    pub audio_rate: f64,
    pub motion_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 2,
            sequences: 4,
            frames: 20,
            vertices: 10,
            feature_dim: 8,
            audio_rate: 50.0,
            motion_rate: 25.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn audio_len(&self) -> usize {
        self.audio_len_for(self.frames)
    }

    pub fn audio_len_for(&self, frames: usize) -> usize {
        ((frames as f64 * self.audio_rate / self.motion_rate).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("identities", self.identities),
            ("sequences", self.sequences),
            ("frames", self.frames),
            ("vertices", self.vertices),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("synthetic {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// The ground-truth mapping shared by every sequence of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMapping {
    pub readout: Matrix,
    pub offsets: Vec<Matrix>,
}

/// Centered width-3 moving average over rows, truncated at the ends.
pub fn smooth_rows(m: &Matrix) -> Matrix {
    let n = m.rows();
    Matrix::from_fn(n, m.cols(), |i, j| {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        (lo..=hi).map(|r| m.get(r, j)).sum::<f64>() / (hi - lo + 1) as f64
    })
}

impl SyntheticMapping {
    /// `S·R·X`: the audio as seen by the linear readout.
    pub fn regressors(&self, features: &Matrix, frames: usize) -> Result<Matrix> {
        Ok(smooth_rows(&resample_linear(features, frames)?))
    }

    pub fn motion(&self, features: &Matrix, identity: usize, frames: usize) -> Result<Matrix> {
        let offset = self
            .offsets
            .get(identity)
            .ok_or(Error::IdentityOutOfRange { index: identity, count: self.offsets.len() })?;
        let mut y = self.regressors(features, frames)?.matmul(&self.readout)?;
        for t in 0..frames {
            for (v, o) in y.row_mut(t).iter_mut().zip(offset.as_slice()) {
                *v += o;
            }
        }
        Ok(y)
    }
}

/// Smooth band-limited audio features: each column sums three sinusoids of
/// 0.5 to 3 cycles per `rows`.
pub fn random_features(rng: &mut impl Rng, rows: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for j in 0..dim {
        for _ in 0..3 {
            let amp = rng.random_range(0.2..0.6);
            let freq = rng.random_range(0.5..3.0);
            let phase = rng.random_range(0.0..TAU);
            for i in 0..rows {
                let x = m.get(i, j) + amp * (TAU * freq * i as f64 / rows as f64 + phase).sin();
                m.set(i, j, x);
            }
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub mapping: SyntheticMapping,
    /// Identity-major: all sequences of identity 0, then identity 1, …
    pub samples: Vec<TrainingSample>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = 3 * spec.vertices;
    let scale = 1.0 / (spec.feature_dim as f64).sqrt();
    let readout = Matrix::from_fn(spec.feature_dim, m, |_, _| rng.random_range(-scale..scale));
    let offsets = (0..spec.identities)
        .map(|_| Matrix::from_fn(1, m, |_, _| rng.random_range(-0.5..0.5)))
        .collect();
    let mapping = SyntheticMapping { readout, offsets };
    let mut samples = Vec::with_capacity(spec.identities * spec.sequences);
    for identity in 0..spec.identities {
        for _ in 0..spec.sequences {
            let x = random_features(&mut rng, spec.audio_len(), spec.feature_dim);
            let y = mapping.motion(&x, identity, spec.frames)?;
            samples.push(TrainingSample {
                audio: AudioInput::features(x, spec.audio_rate),
                motion: MotionSequence::new(y, spec.motion_rate)?,
                identity,
            });
        }
    }
    Ok(SyntheticCorpus { spec: spec.clone(), mapping, samples })
}

/// Writes the corpus as `F32M` files plus a manifest into `dir`.
pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut written = Vec::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        let AudioInput::Features { features, .. } = &s.audio else {
            return Err(Error::Contract("synthetic audio is always features".into()));
        };
        let audio = PathBuf::from(format!("audio_{i:03}.f32mat"));
        let motion = PathBuf::from(format!("motion_{i:03}.f32mat"));
        save_matrix(&dir.join(&audio), features)?;
        save_matrix(&dir.join(&motion), &s.motion.frames)?;
        written.push(dir.join(&audio));
        written.push(dir.join(&motion));
        entries.push(ManifestEntry { identity: s.identity, audio, motion });
    }
    let sp = &corpus.spec;
    let mut header = String::new();
    let _ = writeln!(header, "synthetic corpus: Y = S·R·X·W + offset[identity]");
    let _ = write!(
        header,
        "identities={} sequences={} frames={} vertices={} feature_dim={} audio_rate={} motion_rate={} seed={}",
        sp.identities, sp.sequences, sp.frames, sp.vertices, sp.feature_dim, sp.audio_rate, sp.motion_rate, sp.seed
    );
    write_manifest(dir, &header, &entries)?;
    Ok(written)
}
