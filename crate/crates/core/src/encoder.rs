//! Audio side: feature extraction, length resampling and the transformer
//! encoder that produces `k·T` contextualized rows of width `d`.

use crate::attention::{mh_attention, AttentionProjections, AttentionRecord};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::positional::sinusoid;
use crate::tensor::{conv1d_strided, BoundParameters, Matrix, Tape, Var};

/// Speech input: a raw waveform or an already extracted feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum AudioInput {
    Waveform { samples: Vec<f64>, sample_rate: f64 },
    Features { features: Matrix, rate: f64 },
}

impl AudioInput {
    pub fn features(features: Matrix, rate: f64) -> Self {
        AudioInput::Features { features, rate }
    }

    /// Number of feature frames `T′` this input yields under `cfg`.
    pub fn feature_len(&self, cfg: &ModelConfig) -> Result<usize> {
        match self {
            AudioInput::Features { features, .. } => Ok(features.rows()),
            AudioInput::Waveform { samples, .. } => {
                let mut len = samples.len();
                for l in &cfg.extractor {
                    len = crate::tensor::conv_output_len(len, l.width, l.stride)
                        .ok_or(Error::TooShort { len: samples.len(), width: cfg.min_waveform_len() })?;
                }
                Ok(len)
            }
        }
    }
}

/// Encoder output `A` with `k·T` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedAudio {
    pub rows: Matrix,
    pub ratio: usize,
    pub motion_len: usize,
}

/// Interpolation matrix `target × source` mapping output row `u` to source
/// coordinate `u·(source−1)/(target−1)`, so both endpoints are preserved.
pub fn resample_matrix(source: usize, target: usize) -> Matrix {
    let mut m = Matrix::zeros(target, source);
    if source == 1 || target == 1 {
        for u in 0..target {
            m.set(u, 0, 1.0);
        }
        return m;
    }
    let scale = (source - 1) as f64 / (target - 1) as f64;
    for u in 0..target {
        let x = u as f64 * scale;
        let lo = (x.floor() as usize).min(source - 1);
        let frac = x - lo as f64;
        if frac == 0.0 || lo == source - 1 {
            m.set(u, lo, 1.0);
        } else {
            m.set(u, lo, 1.0 - frac);
            m.set(u, lo + 1, frac);
        }
    }
    m
}

/// Linearly resamples the rows of `features` to `target` rows.
pub fn resample_linear(features: &Matrix, target: usize) -> Result<Matrix> {
    if features.rows() == 0 || target == 0 {
        return Err(Error::Contract("resampling needs at least one source and target row".into()));
    }
    resample_matrix(features.rows(), target).matmul(features)
}

/// Runs the waveform extractor on the tape; feature input passes through
/// unchanged as a constant.
pub fn extract_features_on_tape(
    tape: &mut Tape,
    bound: &BoundParameters,
    cfg: &ModelConfig,
    audio: &AudioInput,
) -> Result<Var> {
    match audio {
        AudioInput::Features { features, .. } => {
            if features.cols() != cfg.feature_dim {
                return Err(Error::dims("audio features", features.shape(), (features.rows(), cfg.feature_dim)));
            }
            Ok(tape.constant(features.clone()))
        }
        AudioInput::Waveform { samples, .. } => {
            if cfg.extractor.is_empty() {
                return Err(Error::Contract("model has no waveform extractor; supply features".into()));
            }
            let min = cfg.min_waveform_len();
            if samples.len() < min {
                return Err(Error::TooShort { len: samples.len(), width: min });
            }
            let mut x = tape.constant(Matrix::from_vec(samples.len(), 1, samples.clone())?);
            for (i, layer) in cfg.extractor.iter().enumerate() {
                let kernel = bound.var(&format!("extractor.{i}.kernel"))?;
                let bias = bound.var(&format!("extractor.{i}.bias"))?;
                x = conv1d_strided(tape, x, kernel, bias, layer.width, layer.stride, cfg.activation)?;
            }
            Ok(x)
        }
    }
}

pub(crate) fn attention_projections(bound: &BoundParameters, prefix: &str) -> Result<AttentionProjections> {
    Ok(AttentionProjections {
        wq: bound.var(&format!("{prefix}.wq"))?,
        wk: bound.var(&format!("{prefix}.wk"))?,
        wv: bound.var(&format!("{prefix}.wv"))?,
        wo: bound.var(&format!("{prefix}.wo"))?,
    })
}

pub(crate) fn layer_norm(tape: &mut Tape, bound: &BoundParameters, x: Var, prefix: &str, eps: f64) -> Result<Var> {
    let gain = bound.var(&format!("{prefix}.gain"))?;
    let offset = bound.var(&format!("{prefix}.offset"))?;
    tape.layer_norm(x, gain, offset, eps)
}

pub(crate) fn feed_forward(tape: &mut Tape, bound: &BoundParameters, x: Var, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let h = tape.linear(x, bound.var(&format!("{prefix}.w1"))?, bound.var(&format!("{prefix}.b1"))?)?;
    let h = tape.activation(h, cfg.activation);
    tape.linear(h, bound.var(&format!("{prefix}.w2"))?, bound.var(&format!("{prefix}.b2"))?)
}

/// Full encoder on the tape: extract → resample to `k·motion_len` rows →
/// input projection → sinusoidal position → unmasked transformer layers →
/// output projection to `d`.
pub fn encode_on_tape(
    tape: &mut Tape,
    bound: &BoundParameters,
    cfg: &ModelConfig,
    audio: &AudioInput,
    motion_len: usize,
    records: Option<&mut Vec<AttentionRecord>>,
) -> Result<Var> {
    if motion_len == 0 {
        return Err(Error::EmptySequence);
    }
    let feats = extract_features_on_tape(tape, bound, cfg, audio)?;
    let target = cfg.frame_ratio() * motion_len;
    let source = tape.shape(feats).0;
    let resampled = if source == target {
        feats
    } else {
        let r = tape.constant(resample_matrix(source, target));
        tape.matmul(r, feats)?
    };
    let h = tape.linear(
        resampled,
        bound.var("encoder.input_proj.w")?,
        bound.var("encoder.input_proj.b")?,
    )?;
    let mut pe = Matrix::zeros(target, cfg.encoder_dim);
    for t in 0..target {
        pe.row_mut(t).copy_from_slice(&sinusoid(t, cfg.encoder_dim));
    }
    let pe = tape.constant(pe);
    let mut h = tape.add(h, pe)?;

    let mut records = records;
    for l in 0..cfg.encoder_layers {
        let prefix = format!("encoder.layers.{l}");
        let proj = attention_projections(bound, &format!("{prefix}.attn"))?;
        let label = records.as_ref().map(|_| ("encoder_self", l, target - 1));
        let (att, rec) = mh_attention(tape, h, h, &proj, cfg.encoder_heads, None, None, label)?;
        if let (Some(store), Some(rec)) = (records.as_deref_mut(), rec) {
            store.push(rec);
        }
        let x = tape.add(h, att)?;
        let x = layer_norm(tape, bound, x, &format!("{prefix}.ln1"), cfg.ln_eps)?;
        let ff = feed_forward(tape, bound, x, &format!("{prefix}.ff"), cfg)?;
        let x2 = tape.add(x, ff)?;
        h = layer_norm(tape, bound, x2, &format!("{prefix}.ln2"), cfg.ln_eps)?;
    }
    tape.linear(h, bound.var("encoder.output_proj.w")?, bound.var("encoder.output_proj.b")?)
}
