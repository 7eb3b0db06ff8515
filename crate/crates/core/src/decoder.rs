//! Autoregressive motion decoder: style and motion embedding, biased causal
//! self-attention, alignment-biased cross-modal attention, feed-forward and
//! the vertex-space readout.

use crate::attention::{mh_attention, AttentionRecord};
use crate::config::{ModelConfig, OutputSpace};
use crate::encoder::{attention_projections, feed_forward, layer_norm};
use crate::error::{Error, Result};
use crate::positional::{alignment_bias, decoder_self_bias, ppe, PositionalTable};
use crate::tensor::{BoundParameters, Matrix, Parameters, Tape, Var};

/// `T × 3V` vertex trajectories at `frame_rate` frames per second.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: Matrix,
    pub frame_rate: f64,
}

impl MotionSequence {
    pub fn new(frames: Matrix, frame_rate: f64) -> Result<Self> {
        if !frames.cols().is_multiple_of(3) {
            return Err(Error::Contract(format!(
                "motion rows need 3·V columns, got {}",
                frames.cols()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("motion sequence"));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn vertices(&self) -> usize {
        self.frames.cols() / 3
    }

    /// Position of vertex `v` in frame `t`.
    pub fn vertex(&self, t: usize, v: usize) -> [f64; 3] {
        let r = &self.frames.row(t)[3 * v..3 * v + 3];
        [r[0], r[1], r[2]]
    }
}

fn check_identity(identity: usize, cfg: &ModelConfig) -> Result<()> {
    if identity >= cfg.identities {
        return Err(Error::IdentityOutOfRange { index: identity, count: cfg.identities });
    }
    Ok(())
}

/// Decoder input row for step `t`: `s_n + PPE(0)` at `t = 0`, otherwise
/// `W^f·prev + b^f + s_n + PPE(t)`.
///
/// In offset output space `prev_motion` is taken relative to the template.
pub fn embed_step(
    prev_motion: Option<&[f64]>,
    identity: usize,
    t: usize,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    check_identity(identity, cfg)?;
    if prev_motion.is_some() != (t > 0) {
        return Err(Error::Contract("a previous motion is required exactly when t > 0".into()));
    }
    let style = params.get("decoder.style")?.row(identity).to_vec();
    let pe = ppe(t, cfg);
    let mut out: Vec<f64> = style.iter().zip(&pe).map(|(s, p)| s + p).collect();
    if let Some(prev) = prev_motion {
        if prev.len() != cfg.motion_dim() {
            return Err(Error::dims("embed_step", (1, prev.len()), (1, cfg.motion_dim())));
        }
        let mut x = Matrix::row_vector(prev);
        if cfg.output_space == OutputSpace::Offset {
            x = x.sub(params.get("decoder.template")?)?;
        }
        let emb = x.matmul(params.get("decoder.motion_encoder.w")?)?;
        let b = params.get("decoder.motion_encoder.b")?;
        // (W·y + b) + s_n, then + PPE
        for (k, o) in out.iter_mut().enumerate() {
            *o = (emb.get(0, k) + b.get(0, k)) + style[k] + pe[k];
        }
    }
    Ok(out)
}

/// Stacks the decoder inputs `F̂` for steps `0..=prev.len()` from the fed-back
/// motion rows `prev` (each `1 × 3V`, template-relative in offset space).
pub fn build_inputs(
    tape: &mut Tape,
    bound: &BoundParameters,
    cfg: &ModelConfig,
    identity: usize,
    prev: &[Var],
    positions: &PositionalTable,
) -> Result<Var> {
    check_identity(identity, cfg)?;
    let t = prev.len() + 1;
    let style_table = bound.var("decoder.style")?;
    let style = tape.slice_rows(style_table, identity, 1)?;
    let base = if prev.is_empty() {
        tape.constant(Matrix::zeros(1, cfg.d_model))
    } else {
        let stacked = if prev.len() == 1 { prev[0] } else { tape.concat_rows(prev)? };
        let emb = tape.linear(
            stacked,
            bound.var("decoder.motion_encoder.w")?,
            bound.var("decoder.motion_encoder.b")?,
        )?;
        let first = tape.constant(Matrix::zeros(1, cfg.d_model));
        tape.concat_rows(&[first, emb])?
    };
    let with_style = tape.add_row(base, style)?;
    let mut pe = Matrix::zeros(t, cfg.d_model);
    for s in 0..t {
        pe.row_mut(s).copy_from_slice(&positions.row(s));
    }
    let pe = tape.constant(pe);
    tape.add(with_style, pe)
}

/// One decoder layer over `t` query rows and the `k·total_len` encoded
/// audio rows. Attention records for the self and cross blocks are pushed
/// onto `records` when given.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer(
    tape: &mut Tape,
    bound: &BoundParameters,
    cfg: &ModelConfig,
    layer: usize,
    inputs: Var,
    audio: Var,
    total_len: usize,
    records: Option<&mut Vec<AttentionRecord>>,
) -> Result<Var> {
    let t = tape.shape(inputs).0;
    let k = cfg.frame_ratio();
    if tape.shape(audio).0 != k * total_len {
        return Err(Error::dims("decoder audio", tape.shape(audio), (k * total_len, cfg.d_model)));
    }
    let prefix = format!("decoder.layers.{layer}");
    let mut records = records;
    let step = t - 1;

    let (self_bias, slopes) = decoder_self_bias(t, cfg)?;
    let proj = attention_projections(bound, &format!("{prefix}.self_attn"))?;
    let label = records.as_ref().map(|_| ("decoder_self", layer, step));
    let (sa, rec) = mh_attention(tape, inputs, inputs, &proj, cfg.heads, Some(&self_bias), slopes.as_deref(), label)?;
    if let (Some(store), Some(rec)) = (records.as_deref_mut(), rec) {
        store.push(rec);
    }
    let x = tape.add(inputs, sa)?;
    let x1 = layer_norm(tape, bound, x, &format!("{prefix}.ln1"), cfg.ln_eps)?;

    let cross_bias = alignment_bias(t, total_len, k)?;
    let proj = attention_projections(bound, &format!("{prefix}.cross_attn"))?;
    let label = records.as_ref().map(|_| ("decoder_cross", layer, step));
    let (ca, rec) = mh_attention(tape, x1, audio, &proj, cfg.heads, Some(&cross_bias), None, label)?;
    if let (Some(store), Some(rec)) = (records.as_deref_mut(), rec) {
        store.push(rec);
    }
    let x = tape.add(x1, ca)?;
    let x2 = layer_norm(tape, bound, x, &format!("{prefix}.ln2"), cfg.ln_eps)?;

    let ff = feed_forward(tape, bound, x2, &format!("{prefix}.ff"), cfg)?;
    let x = tape.add(x2, ff)?;
    layer_norm(tape, bound, x, &format!("{prefix}.ln3"), cfg.ln_eps)
}

/// Linear readout `hidden·W_out + b_out` to `3V` columns.
pub fn decode_motion(tape: &mut Tape, bound: &BoundParameters, hidden: Var) -> Result<Var> {
    tape.linear(
        hidden,
        bound.var("decoder.motion_decoder.w")?,
        bound.var("decoder.motion_decoder.b")?,
    )
}

/// Runs the decoder stack over the full prefix and returns the raw readout
/// for step `prev.len()` as a `1 × 3V` row.
#[allow(clippy::too_many_arguments)]
pub fn predict_step(
    tape: &mut Tape,
    bound: &BoundParameters,
    cfg: &ModelConfig,
    audio: Var,
    identity: usize,
    prev: &[Var],
    total_len: usize,
    positions: &PositionalTable,
    mut records: Option<&mut Vec<AttentionRecord>>,
) -> Result<Var> {
    let t = prev.len() + 1;
    if t > total_len {
        return Err(Error::Contract(format!("step {} beyond motion length {total_len}", t - 1)));
    }
    let mut h = build_inputs(tape, bound, cfg, identity, prev, positions)?;
    for layer in 0..cfg.decoder_layers {
        h = decoder_layer(tape, bound, cfg, layer, h, audio, total_len, records.as_deref_mut())?;
    }
    let last = tape.slice_rows(h, t - 1, 1)?;
    decode_motion(tape, bound, last)
}
