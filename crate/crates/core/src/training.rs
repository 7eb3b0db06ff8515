//! Autoregressive training: every step rolls out the whole sequence on the
//! model's own predictions and backpropagates the summed squared error
//! through the unrolled computation.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::OutputSpace;
use crate::decoder::MotionSequence;
use crate::encoder::{encode_on_tape, AudioInput};
use crate::error::{Error, Result};
use crate::model::FaceFormer;
use crate::tensor::{AdamConfig, AdamState, BoundParameters, Matrix, Parameters, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub audio: AudioInput,
    pub motion: MotionSequence,
    pub identity: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// When set, the learning rate follows a cosine from `adam.lr` down to
    /// this value over all optimizer steps.
    pub lr_final: Option<f64>,
    /// Steps of linear warm-up from zero to the scheduled rate.
    pub warmup_steps: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub freeze_extractor: bool,
    /// Cut gradients through fed-back predictions.
    pub detach_rollout: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
            lr_final: None,
            warmup_steps: 0,
            clip_norm: Some(1.0),
            freeze_extractor: true,
            detach_rollout: false,
        }
    }
}

/// Loss of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Optimizer step counted from zero across epochs.
    pub step: usize,
    pub sample: usize,
    /// Summed squared vertex error over the rollout.
    pub loss: f64,
    /// Per-frame-per-vertex root mean squared Euclidean error.
    pub rmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<StepRecord>,
    pub clipped_steps: usize,
}

/// `Σ_t Σ_v ‖ŷ_{t,v} − y_{t,v}‖²`.
pub fn mse_loss(pred: &MotionSequence, truth: &MotionSequence) -> Result<f64> {
    if pred.frames.shape() != truth.frames.shape() {
        return Err(Error::dims("mse_loss", pred.frames.shape(), truth.frames.shape()));
    }
    Ok(pred.frames.sub(&truth.frames)?.sum_squares())
}

/// `sqrt(loss / (T·V))`, the scale-free companion of [`mse_loss`].
pub fn rmse(pred: &MotionSequence, truth: &MotionSequence) -> Result<f64> {
    let loss = mse_loss(pred, truth)?;
    Ok((loss / (truth.len() * truth.vertices()) as f64).sqrt())
}

/// Root mean squared vertex norm of a motion sequence.
pub fn rms_amplitude(motion: &MotionSequence) -> f64 {
    (motion.frames.sum_squares() / (motion.len() * motion.vertices()) as f64).sqrt()
}

/// Records the full rollout of `sample` on `tape` and returns
/// `(loss, stacked predictions)`.
pub fn rollout_loss(
    model: &FaceFormer,
    tape: &mut Tape,
    bound: &BoundParameters,
    sample: &TrainingSample,
    detach: bool,
) -> Result<(Var, Var)> {
    let t = sample.motion.len();
    let audio = encode_on_tape(tape, bound, &model.config, &sample.audio, t, None)?;
    let rows = model.rollout_on_tape(tape, bound, audio, sample.identity, t, t, detach)?;
    let pred = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
    let truth = tape.constant(sample.motion.frames.clone());
    let diff = tape.sub(pred, truth)?;
    Ok((tape.sum_squares(diff), pred))
}

/// Loss and parameter gradients of one sample's rollout.
pub fn loss_and_gradients(
    model: &FaceFormer,
    sample: &TrainingSample,
    freeze_extractor: bool,
    detach: bool,
) -> Result<(f64, Parameters)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, freeze_extractor);
    let (loss, _) = rollout_loss(model, &mut tape, &bound, sample, detach)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).get(0, 0), bound.gradients(&tape, &grads)))
}

fn validate_dataset(model: &FaceFormer, data: &[TrainingSample]) -> Result<()> {
    let cfg = &model.config;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    for (i, s) in data.iter().enumerate() {
        if s.motion.vertices() != cfg.vertices {
            return Err(Error::Contract(format!(
                "sample {i} has {} vertices, model expects {}",
                s.motion.vertices(),
                cfg.vertices
            )));
        }
        if s.identity >= cfg.identities {
            return Err(Error::IdentityOutOfRange { index: s.identity, count: cfg.identities });
        }
        if s.motion.is_empty() {
            return Err(Error::EmptySequence);
        }
        let implied = cfg.infer_motion_len(s.audio.feature_len(cfg)?);
        if implied.abs_diff(s.motion.len()) > 1 {
            return Err(Error::Contract(format!(
                "sample {i}: {} motion frames but audio implies {implied}",
                s.motion.len()
            )));
        }
    }
    Ok(())
}

/// Mean frame over the whole training set, used as the offset template.
fn mean_frame(data: &[TrainingSample]) -> Matrix {
    let cols = data[0].motion.frames.cols();
    let mut acc = Matrix::zeros(1, cols);
    let mut n = 0usize;
    for s in data {
        for t in 0..s.motion.len() {
            for (a, v) in acc.as_mut_slice().iter_mut().zip(s.motion.frames.row(t)) {
                *a += v;
            }
            n += 1;
        }
    }
    acc.scale(1.0 / n as f64)
}

/// Cosine interpolation from `start` at step 0 to `end` at the last step.
pub fn cosine_lr(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let progress = step as f64 / (total - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Learning rate of optimizer step `step` out of `total`.
pub fn scheduled_lr(opts: &TrainOptions, step: usize, total: usize) -> f64 {
    let base = match opts.lr_final {
        Some(end) => cosine_lr(opts.adam.lr, end, step, total),
        None => opts.adam.lr,
    };
    if step < opts.warmup_steps {
        base * (step + 1) as f64 / opts.warmup_steps as f64
    } else {
        base
    }
}

pub fn train(model: &mut FaceFormer, data: &[TrainingSample], opts: &TrainOptions) -> Result<TrainReport> {
    train_with(model, data, opts, |_| {})
}

/// Trains with batch size one for `opts.epochs` passes over `data`, calling
/// `on_step` after every optimizer step.
pub fn train_with(
    model: &mut FaceFormer,
    data: &[TrainingSample],
    opts: &TrainOptions,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainReport> {
    validate_dataset(model, data)?;
    let mut report = TrainReport::default();
    if opts.epochs == 0 {
        return Ok(report);
    }
    if model.config.output_space == OutputSpace::Offset {
        let tpl = model.params.get_mut("decoder.template")?;
        if tpl.as_slice().iter().all(|&v| v == 0.0) {
            *tpl = mean_frame(data);
        }
    }
    let trainable = |name: &str| FaceFormer::is_trainable(name, opts.freeze_extractor);
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total_steps = opts.epochs * data.len();
    let mut adam = opts.adam;

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let sample = &data[i];
            let (loss, mut grads) =
                loss_and_gradients(model, sample, opts.freeze_extractor, opts.detach_rollout)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, sample: i, loss });
            }
            if let Some(limit) = opts.clip_norm {
                let norm = grads.global_norm();
                if norm > limit {
                    debug!("epoch {epoch} sample {i}: clipping gradient norm {norm:.4e} to {limit}");
                    grads.scale_in_place(limit / norm);
                    report.clipped_steps += 1;
                }
            }
            adam.lr = scheduled_lr(opts, report.history.len(), total_steps);
            state.step(&mut model.params, &grads, &adam, trainable)?;
            let frames = sample.motion.len() * sample.motion.vertices();
            let record = StepRecord { epoch, step: report.history.len(), sample: i, loss, rmse: (loss / frames as f64).sqrt() };
            epoch_loss += loss;
            on_step(&record);
            report.history.push(record);
        }
        info!("epoch {epoch}: mean loss {:.6e}", epoch_loss / data.len() as f64);
    }
    if report.clipped_steps > 0 {
        info!("gradient clipping was active on {} of {} steps", report.clipped_steps, report.history.len());
    }
    Ok(report)
}
