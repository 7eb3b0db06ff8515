//! Periodic positional encoding and the additive attention biases.
//!
//! All step indices are 0-based. Masked entries of a bias are `-inf`.

use crate::config::{ModelConfig, PeMode};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Sinusoidal encoding of `position` over `d` components:
/// `(sin(x/10000^(2i/d)), cos(x/10000^(2i/d)))` pairs.
pub fn sinusoid(position: usize, d: usize) -> Vec<f64> {
    let x = position as f64;
    (0..d)
        .map(|c| {
            let freq = 10000f64.powf((c - c % 2) as f64 / d as f64);
            if c % 2 == 0 {
                (x / freq).sin()
            } else {
                (x / freq).cos()
            }
        })
        .collect()
}

/// Decoder positional encoding of step `t` under `cfg.pe_mode`.
pub fn ppe(t: usize, cfg: &ModelConfig) -> Vec<f64> {
    match cfg.pe_mode {
        PeMode::TbPpe => sinusoid(t % cfg.period, cfg.d_model),
        PeMode::OriginalPe => sinusoid(t, cfg.d_model),
        PeMode::Alibi => vec![0.0; cfg.d_model],
    }
}

/// Precomputed decoder encodings for steps `0..max_steps`; rows beyond
/// are computed on demand.
#[derive(Clone, Debug)]
pub struct PositionalTable {
    table: Matrix,
    cfg: ModelConfig,
}

impl PositionalTable {
    pub fn new(cfg: &ModelConfig, max_steps: usize) -> Self {
        let mut table = Matrix::zeros(max_steps, cfg.d_model);
        for t in 0..max_steps {
            table.row_mut(t).copy_from_slice(&ppe(t, cfg));
        }
        Self { table, cfg: cfg.clone() }
    }

    pub fn max_steps(&self) -> usize {
        self.table.rows()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        if t < self.table.rows() {
            self.table.row(t).to_vec()
        } else {
            ppe(t, &self.cfg)
        }
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.table
    }
}

/// Head slopes `2^(−8h/H)` for `h = 1..=H`.
pub fn head_slopes(heads: usize) -> Result<Vec<f64>> {
    if heads == 0 || !heads.is_power_of_two() {
        return Err(Error::UnsupportedHeadCount(heads));
    }
    Ok((1..=heads).map(|h| 2f64.powf(-8.0 * h as f64 / heads as f64)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasKind {
    Temporal,
    Alignment,
}

/// Additive pre-softmax score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasMatrix {
    pub kind: BiasKind,
    pub values: Matrix,
}

impl BiasMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Multiplies finite entries by `factor`, leaving `-inf` in place.
    pub fn scaled(&self, factor: f64) -> BiasMatrix {
        let values = self.values.map(|v| if v.is_finite() { v * factor } else { v });
        BiasMatrix { kind: self.kind, values }
    }
}

/// Causal bias with entry `(i, j) = −slope·⌊(i − j)/period⌋` for `j ≤ i`
/// and `-inf` above the diagonal.
pub fn temporal_bias(t: usize, period: usize, slope: f64) -> BiasMatrix {
    assert!(period >= 1, "period must be at least 1");
    let values = Matrix::from_fn(t, t, |i, j| {
        if j > i {
            f64::NEG_INFINITY
        } else {
            -slope * ((i - j) / period) as f64
        }
    });
    BiasMatrix { kind: BiasKind::Temporal, values }
}

/// Alignment bias for `t` motion queries over `k·total` audio keys: zero
/// where `k·i ≤ j < k·(i+1)`, `-inf` elsewhere.
pub fn alignment_bias(t: usize, total: usize, k: usize) -> Result<BiasMatrix> {
    if t > total {
        return Err(Error::Contract(format!("{t} query steps exceed motion length {total}")));
    }
    if k == 0 {
        return Err(Error::Contract("frame ratio must be at least 1".into()));
    }
    let values = Matrix::from_fn(t, k * total, |i, j| {
        if k * i <= j && j < k * (i + 1) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    });
    Ok(BiasMatrix { kind: BiasKind::Alignment, values })
}

/// Base (unscaled) causal bias for the decoder self-attention and the
/// per-head slopes to apply to it, if any.
///
/// `tb_ppe` uses the period-quantized bias, `alibi` the same with period 1,
/// `original_pe` a plain causal mask with no slopes.
pub fn decoder_self_bias(t: usize, cfg: &ModelConfig) -> Result<(BiasMatrix, Option<Vec<f64>>)> {
    match cfg.pe_mode {
        PeMode::TbPpe => Ok((temporal_bias(t, cfg.period, 1.0), Some(head_slopes(cfg.heads)?))),
        PeMode::Alibi => Ok((temporal_bias(t, 1, 1.0), Some(head_slopes(cfg.heads)?))),
        PeMode::OriginalPe => Ok((temporal_bias(t, 1, 0.0), None)),
    }
}
