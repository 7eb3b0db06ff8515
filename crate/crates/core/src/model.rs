//! The assembled model: parameter layout, initialization and the
//! encode / autoregressive decode entry points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionRecord;
use crate::config::{ModelConfig, OutputSpace};
use crate::decoder::{predict_step, MotionSequence};
use crate::encoder::{encode_on_tape, AudioInput, EncodedAudio};
use crate::error::{Error, Result};
use crate::positional::PositionalTable;
use crate::tensor::{BoundParameters, Matrix, Parameters, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Uniform Xavier range from the matrix shape.
    Xavier,
    Zeros,
    Ones,
    /// Uniform in `[-0.1, 0.1]`.
    Small,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize), Init)> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: (usize, usize), init: Init| out.push((name, shape, init));

    let mut in_ch = 1;
    for (i, l) in cfg.extractor.iter().enumerate() {
        push(format!("extractor.{i}.kernel"), (l.width * in_ch, cfg.feature_dim), Init::Xavier);
        push(format!("extractor.{i}.bias"), (1, cfg.feature_dim), Init::Zeros);
        in_ch = cfg.feature_dim;
    }

    let attn = |push: &mut dyn FnMut(String, (usize, usize), Init), prefix: &str, d: usize| {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{prefix}.{w}"), (d, d), Init::Xavier);
        }
    };
    let norm = |push: &mut dyn FnMut(String, (usize, usize), Init), prefix: &str, d: usize| {
        push(format!("{prefix}.gain"), (1, d), Init::Ones);
        push(format!("{prefix}.offset"), (1, d), Init::Zeros);
    };
    let ff = |push: &mut dyn FnMut(String, (usize, usize), Init), prefix: &str, d: usize, hidden: usize| {
        push(format!("{prefix}.w1"), (d, hidden), Init::Xavier);
        push(format!("{prefix}.b1"), (1, hidden), Init::Zeros);
        push(format!("{prefix}.w2"), (hidden, d), Init::Xavier);
        push(format!("{prefix}.b2"), (1, d), Init::Zeros);
    };

    let de = cfg.encoder_dim;
    push("encoder.input_proj.w".into(), (cfg.feature_dim, de), Init::Xavier);
    push("encoder.input_proj.b".into(), (1, de), Init::Zeros);
    for l in 0..cfg.encoder_layers {
        let p = format!("encoder.layers.{l}");
        attn(&mut push, &format!("{p}.attn"), de);
        norm(&mut push, &format!("{p}.ln1"), de);
        ff(&mut push, &format!("{p}.ff"), de, cfg.encoder_ff_dim);
        norm(&mut push, &format!("{p}.ln2"), de);
    }
    push("encoder.output_proj.w".into(), (de, cfg.d_model), Init::Xavier);
    push("encoder.output_proj.b".into(), (1, cfg.d_model), Init::Zeros);

    let d = cfg.d_model;
    let m = cfg.motion_dim();
    push("decoder.style".into(), (cfg.identities, d), Init::Small);
    push("decoder.motion_encoder.w".into(), (m, d), Init::Xavier);
    push("decoder.motion_encoder.b".into(), (1, d), Init::Zeros);
    for l in 0..cfg.decoder_layers {
        let p = format!("decoder.layers.{l}");
        attn(&mut push, &format!("{p}.self_attn"), d);
        norm(&mut push, &format!("{p}.ln1"), d);
        attn(&mut push, &format!("{p}.cross_attn"), d);
        norm(&mut push, &format!("{p}.ln2"), d);
        ff(&mut push, &format!("{p}.ff"), d, cfg.ff_dim);
        norm(&mut push, &format!("{p}.ln3"), d);
    }
    push("decoder.motion_decoder.w".into(), (d, m), Init::Xavier);
    push("decoder.motion_decoder.b".into(), (1, m), Init::Zeros);
    if cfg.output_space == OutputSpace::Offset {
        push("decoder.template".into(), (1, m), Init::Zeros);
    }
    out
}

/// Name and shape of every parameter implied by `cfg`, in layout order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceFormer {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl FaceFormer {
    /// Fresh model with weights drawn from a generator seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Parameters::new();
        for (name, (r, c), init) in layout(&config) {
            let m = match init {
                Init::Zeros => Matrix::zeros(r, c),
                Init::Ones => Matrix::filled(r, c, 1.0),
                Init::Xavier => {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound))
                }
                Init::Small => Matrix::from_fn(r, c, |_, _| rng.random_range(-0.1..0.1)),
            };
            params.insert(name, m)?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes against
    /// the layout `config` implies.
    pub fn from_parameters(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters for this config, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let m = params.get(name)?;
            if m.shape() != *shape {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// Whether `name` receives optimizer updates. The offset template is
    /// fixed; extractor weights are fixed when `freeze_extractor` is set.
    pub fn is_trainable(name: &str, freeze_extractor: bool) -> bool {
        if name == "decoder.template" {
            return false;
        }
        !(freeze_extractor && name.starts_with("extractor."))
    }

    /// Records parameters on `tape` with the given trainability rule.
    pub fn bind(&self, tape: &mut Tape, freeze_extractor: bool) -> BoundParameters {
        self.params.bind(tape, |n| Self::is_trainable(n, freeze_extractor))
    }

    /// Motion length used when none is requested.
    pub fn default_motion_len(&self, audio: &AudioInput) -> Result<usize> {
        Ok(self.config.infer_motion_len(audio.feature_len(&self.config)?))
    }

    pub fn encode(&self, audio: &AudioInput, motion_len: Option<usize>) -> Result<EncodedAudio> {
        self.encode_recorded(audio, motion_len, None)
    }

    fn encode_recorded(
        &self,
        audio: &AudioInput,
        motion_len: Option<usize>,
        records: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<EncodedAudio> {
        let motion_len = match motion_len {
            Some(t) => t,
            None => self.default_motion_len(audio)?,
        };
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let out = encode_on_tape(&mut tape, &bound, &self.config, audio, motion_len, records)?;
        Ok(EncodedAudio {
            rows: tape.value(out).clone(),
            ratio: self.config.frame_ratio(),
            motion_len,
        })
    }

    /// Autoregressive rollout on `tape` feeding back the model's own
    /// predictions. Returns one `1 × 3V` row per step.
    ///
    /// With `detach`, fed-back predictions are cut from the gradient path.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParameters,
        audio: Var,
        identity: usize,
        steps: usize,
        total_len: usize,
        detach: bool,
    ) -> Result<Vec<Var>> {
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        let positions = PositionalTable::new(&self.config, total_len);
        let template = match self.config.output_space {
            OutputSpace::Offset => Some(bound.var("decoder.template")?),
            OutputSpace::Absolute => None,
        };
        let mut fed_back = Vec::with_capacity(steps);
        let mut outputs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let raw = predict_step(tape, bound, &self.config, audio, identity, &fed_back, total_len, &positions, None)?;
            let out = match template {
                Some(tpl) => tape.add(raw, tpl)?,
                None => raw,
            };
            outputs.push(out);
            fed_back.push(if detach { tape.detach(raw) } else { raw });
        }
        Ok(outputs)
    }

    /// Decodes the first `steps` frames for `encoded`, re-running the full
    /// prefix at each step.
    pub fn decode(&self, encoded: &EncodedAudio, identity: usize, steps: usize) -> Result<MotionSequence> {
        self.decode_recorded(encoded, identity, steps, None)
    }

    fn decode_recorded(
        &self,
        encoded: &EncodedAudio,
        identity: usize,
        steps: usize,
        mut records: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<MotionSequence> {
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        if steps > encoded.motion_len {
            return Err(Error::Contract(format!(
                "{steps} steps requested from audio encoded for {} frames",
                encoded.motion_len
            )));
        }
        let cfg = &self.config;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let audio = tape.constant(encoded.rows.clone());
        let positions = PositionalTable::new(cfg, encoded.motion_len);
        let template = match cfg.output_space {
            OutputSpace::Offset => Some(self.params.get("decoder.template")?.clone()),
            OutputSpace::Absolute => None,
        };
        let mark = tape.len();
        let mut raw_rows: Vec<Matrix> = Vec::with_capacity(steps);
        let mut frames = Matrix::zeros(steps, cfg.motion_dim());
        for t in 0..steps {
            tape.truncate(mark);
            let prev: Vec<Var> = raw_rows.iter().map(|r| tape.constant(r.clone())).collect();
            let rec = if t + 1 == steps { records.as_deref_mut() } else { None };
            let raw = predict_step(&mut tape, &bound, cfg, audio, identity, &prev, encoded.motion_len, &positions, rec)?;
            let raw = tape.value(raw).clone();
            let out = match &template {
                Some(tpl) => raw.add(tpl)?,
                None => raw.clone(),
            };
            frames.row_mut(t).copy_from_slice(out.row(0));
            raw_rows.push(raw);
        }
        MotionSequence::new(frames, cfg.motion_rate)
    }

    /// Encodes `audio` once, then predicts `frames` motion frames (or the
    /// length implied by the audio duration).
    pub fn autoregress(&self, audio: &AudioInput, identity: usize, frames: Option<usize>) -> Result<MotionSequence> {
        if frames == Some(0) {
            return Err(Error::EmptySequence);
        }
        let encoded = self.encode(audio, frames)?;
        self.decode(&encoded, identity, encoded.motion_len)
    }

    /// Like [`autoregress`](Self::autoregress), also capturing encoder
    /// attention and the decoder attention used for the final frame.
    pub fn autoregress_recorded(
        &self,
        audio: &AudioInput,
        identity: usize,
        frames: Option<usize>,
    ) -> Result<(MotionSequence, Vec<AttentionRecord>)> {
        if frames == Some(0) {
            return Err(Error::EmptySequence);
        }
        let mut records = Vec::new();
        let encoded = self.encode_recorded(audio, frames, Some(&mut records))?;
        let motion = self.decode_recorded(&encoded, identity, encoded.motion_len, Some(&mut records))?;
        Ok((motion, records))
    }
}
