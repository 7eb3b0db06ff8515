//! Model hyperparameters and the derived quantities every module relies on.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Positional strategy of the decoder self-attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PeMode {
    /// Periodic sinusoid plus period-quantized temporal bias.
    #[default]
    TbPpe,
    /// Standard sinusoid, causal mask only.
    OriginalPe,
    /// No positional encoding; distance-linear bias (period 1).
    Alibi,
}

impl fmt::Display for PeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeMode::TbPpe => "tb_ppe",
            PeMode::OriginalPe => "original_pe",
            PeMode::Alibi => "alibi",
        })
    }
}

impl FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tb_ppe" => Ok(PeMode::TbPpe),
            "original_pe" => Ok(PeMode::OriginalPe),
            "alibi" => Ok(PeMode::Alibi),
            other => Err(Error::Config(format!("unknown pe_mode `{other}`"))),
        }
    }
}

/// Whether the motion decoder emits absolute vertex positions or offsets
/// from a fixed template.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputSpace {
    #[default]
    Absolute,
    Offset,
}

impl fmt::Display for OutputSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputSpace::Absolute => "absolute",
            OutputSpace::Offset => "offset",
        })
    }
}

impl FromStr for OutputSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(OutputSpace::Absolute),
            "offset" => Ok(OutputSpace::Offset),
            other => Err(Error::Config(format!("unknown output_space `{other}`"))),
        }
    }
}

/// One temporal convolution of the waveform feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub width: usize,
    pub stride: usize,
}

/// Parses `width:stride` pairs separated by commas, e.g. `10:5,3:2`.
/// An empty string or `none` means no extractor.
pub fn parse_conv_stack(s: &str) -> Result<Vec<ConvSpec>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let (w, st) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad conv layer `{part}`, want width:stride")))?;
            let width = w.trim().parse().map_err(|_| Error::Config(format!("bad width in `{part}`")))?;
            let stride = st.trim().parse().map_err(|_| Error::Config(format!("bad stride in `{part}`")))?;
            Ok(ConvSpec { width, stride })
        })
        .collect()
}

pub fn format_conv_stack(layers: &[ConvSpec]) -> String {
    if layers.is_empty() {
        return "none".into();
    }
    layers.iter().map(|l| format!("{}:{}", l.width, l.stride)).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Decoder model dimension `d`.
    pub d_model: usize,
    /// Decoder attention heads; a power of two.
    pub heads: usize,
    /// Period `p` of the positional encoding and temporal bias.
    pub period: usize,
    /// Audio feature rate `f_a` in Hz.
    pub audio_rate: f64,
    /// Motion frame rate `f_m` in frames per second.
    pub motion_rate: f64,
    /// Width `d_a` of audio feature rows.
    pub feature_dim: usize,
    pub encoder_dim: usize,
    pub encoder_heads: usize,
    pub encoder_layers: usize,
    pub encoder_ff_dim: usize,
    pub decoder_layers: usize,
    pub ff_dim: usize,
    /// Mesh vertex count `V`; motion rows have `3V` columns.
    pub vertices: usize,
    /// Number of training identities `N`.
    pub identities: usize,
    pub pe_mode: PeMode,
    pub activation: Activation,
    pub output_space: OutputSpace,
    /// Waveform extractor layers; empty when only feature input is used.
    pub extractor: Vec<ConvSpec>,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl ModelConfig {
    /// Desk-scale profile used with generated data.
    pub fn synthetic() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            period: 10,
            audio_rate: 50.0,
            motion_rate: 25.0,
            feature_dim: 8,
            encoder_dim: 32,
            encoder_heads: 2,
            encoder_layers: 2,
            encoder_ff_dim: 64,
            decoder_layers: 1,
            ff_dim: 64,
            vertices: 10,
            identities: 2,
            pe_mode: PeMode::TbPpe,
            activation: Activation::Relu,
            output_space: OutputSpace::Absolute,
            extractor: Vec::new(),
            ln_eps: 1e-5,
        }
    }

    /// Decoder sizes of the BIWI setup (25 fps, 23370 vertices) with a
    /// desk-scale encoder.
    pub fn biwi() -> Self {
        Self {
            d_model: 128,
            period: 25,
            audio_rate: 49.0,
            motion_rate: 25.0,
            ff_dim: 2048,
            vertices: 23370,
            identities: 6,
            encoder_dim: 128,
            encoder_ff_dim: 256,
            feature_dim: 64,
            extractor: waveform_extractor(),
            ..Self::synthetic()
        }
    }

    /// Decoder sizes of the VOCASET setup (60 fps, 5023 vertices).
    pub fn vocaset() -> Self {
        Self {
            d_model: 64,
            period: 30,
            audio_rate: 49.0,
            motion_rate: 60.0,
            ff_dim: 2048,
            vertices: 5023,
            identities: 8,
            encoder_dim: 64,
            encoder_ff_dim: 256,
            feature_dim: 64,
            extractor: waveform_extractor(),
            ..Self::synthetic()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "synthetic" => Ok(Self::synthetic()),
            "biwi" => Ok(Self::biwi()),
            "vocaset" => Ok(Self::vocaset()),
            other => Err(Error::Config(format!("unknown profile `{other}`"))),
        }
    }

    /// `k = ⌈f_a / f_m⌉`, audio frames per motion frame after resampling.
    pub fn frame_ratio(&self) -> usize {
        ((self.audio_rate / self.motion_rate).ceil() as usize).max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn encoder_head_dim(&self) -> usize {
        self.encoder_dim / self.encoder_heads
    }

    pub fn motion_dim(&self) -> usize {
        3 * self.vertices
    }

    /// Product of the extractor strides.
    pub fn extractor_stride(&self) -> usize {
        self.extractor.iter().map(|l| l.stride).product()
    }

    /// Shortest waveform the extractor accepts.
    pub fn min_waveform_len(&self) -> usize {
        // Walk backwards: a layer needs (out − 1)·stride + width inputs.
        self.extractor.iter().rev().fold(1, |out, l| (out - 1) * l.stride + l.width)
    }

    /// Motion length implied by `feature_rows` audio frames:
    /// `max(1, round(T′ · f_m / f_a))`.
    pub fn infer_motion_len(&self, feature_rows: usize) -> usize {
        ((feature_rows as f64 * self.motion_rate / self.audio_rate).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.heads == 0 || !self.heads.is_power_of_two() {
            return Err(Error::UnsupportedHeadCount(self.heads));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} is not a multiple of heads {}", self.d_model, self.heads));
        }
        if self.encoder_heads == 0 || self.encoder_dim == 0 || !self.encoder_dim.is_multiple_of(self.encoder_heads) {
            return fail(format!(
                "encoder_dim {} is not a multiple of encoder_heads {}",
                self.encoder_dim, self.encoder_heads
            ));
        }
        if self.period == 0 {
            return fail("period must be at least 1".into());
        }
        if !(self.audio_rate > 0.0 && self.motion_rate > 0.0) {
            return fail("audio_rate and motion_rate must be positive".into());
        }
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("vertices", self.vertices),
            ("identities", self.identities),
            ("ff_dim", self.ff_dim),
            ("encoder_ff_dim", self.encoder_ff_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.extractor.iter().any(|l| l.width == 0 || l.stride == 0) {
            return fail("extractor widths and strides must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }
}

/// Seven-layer strided stack with total stride 320, which maps 16 kHz audio
/// to roughly 49 frames per second.
pub fn waveform_extractor() -> Vec<ConvSpec> {
    let mut layers = vec![ConvSpec { width: 10, stride: 5 }];
    layers.extend(std::iter::repeat_n(ConvSpec { width: 3, stride: 2 }, 4));
    layers.extend(std::iter::repeat_n(ConvSpec { width: 2, stride: 2 }, 2));
    layers
}
