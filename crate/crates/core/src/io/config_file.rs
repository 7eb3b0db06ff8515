//! `key = value` configuration text.
//!
//! A `profile` key, wherever it appears, selects the base values; every
//! other key overrides one field. Keys left out keep the profile value and
//! are reported at info level.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use log::info;

use crate::config::{format_conv_stack, parse_conv_stack, ModelConfig};
use crate::error::{Error, Result};
use crate::training::TrainOptions;

pub const MODEL_KEYS: &[&str] = &[
    "d_model",
    "heads",
    "period",
    "audio_rate",
    "motion_rate",
    "feature_dim",
    "encoder_dim",
    "encoder_heads",
    "encoder_layers",
    "encoder_ff_dim",
    "decoder_layers",
    "ff_dim",
    "vertices",
    "identities",
    "pe_mode",
    "activation",
    "output_space",
    "extractor",
    "ln_eps",
];

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "seed",
    "lr",
    "lr_final",
    "warmup_steps",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
    "freeze_extractor",
    "detach_rollout",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainOptions,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn apply_model(cfg: &mut ModelConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "d_model" => cfg.d_model = parse(key, v)?,
        "heads" => cfg.heads = parse(key, v)?,
        "period" => cfg.period = parse(key, v)?,
        "audio_rate" => cfg.audio_rate = parse(key, v)?,
        "motion_rate" => cfg.motion_rate = parse(key, v)?,
        "feature_dim" => cfg.feature_dim = parse(key, v)?,
        "encoder_dim" => cfg.encoder_dim = parse(key, v)?,
        "encoder_heads" => cfg.encoder_heads = parse(key, v)?,
        "encoder_layers" => cfg.encoder_layers = parse(key, v)?,
        "encoder_ff_dim" => cfg.encoder_ff_dim = parse(key, v)?,
        "decoder_layers" => cfg.decoder_layers = parse(key, v)?,
        "ff_dim" => cfg.ff_dim = parse(key, v)?,
        "vertices" => cfg.vertices = parse(key, v)?,
        "identities" => cfg.identities = parse(key, v)?,
        "pe_mode" => cfg.pe_mode = v.parse()?,
        "activation" => cfg.activation = v.parse()?,
        "output_space" => cfg.output_space = v.parse()?,
        "extractor" => cfg.extractor = parse_conv_stack(v)?,
        "ln_eps" => cfg.ln_eps = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_train(t: &mut TrainOptions, key: &str, v: &str) -> Result<bool> {
    match key {
        "epochs" => t.epochs = parse(key, v)?,
        "seed" => t.seed = parse(key, v)?,
        "lr" => t.adam.lr = parse(key, v)?,
        "lr_final" => t.lr_final = if v == "none" { None } else { Some(parse(key, v)?) },
        "warmup_steps" => t.warmup_steps = parse(key, v)?,
        "beta1" => t.adam.beta1 = parse(key, v)?,
        "beta2" => t.adam.beta2 = parse(key, v)?,
        "adam_eps" => t.adam.eps = parse(key, v)?,
        "clip_norm" => t.clip_norm = if v == "none" { None } else { Some(parse(key, v)?) },
        "freeze_extractor" => t.freeze_extractor = parse_bool(key, v)?,
        "detach_rollout" => t.detach_rollout = parse_bool(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn key_values(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        out.push((n + 1, k, v));
    }
    Ok(out)
}

fn base_profile(pairs: &[(usize, &str, &str)]) -> Result<ModelConfig> {
    match pairs.iter().find(|(_, k, _)| *k == "profile") {
        Some((_, _, v)) => ModelConfig::profile(v),
        None => Ok(ModelConfig::synthetic()),
    }
}

/// Parses a full run configuration: model fields plus training knobs.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let pairs = key_values(text)?;
    let mut run = RunConfig { model: base_profile(&pairs)?, train: TrainOptions::default() };
    for &(line, k, v) in &pairs {
        if k == "profile" {
            continue;
        }
        let known = apply_model(&mut run.model, k, v)? || apply_train(&mut run.train, k, v)?;
        if !known {
            return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
        }
    }
    let given: BTreeSet<&str> = pairs.iter().map(|p| p.1).collect();
    let defaulted: Vec<&str> = MODEL_KEYS.iter().chain(TRAIN_KEYS).copied().filter(|k| !given.contains(k)).collect();
    if !defaulted.is_empty() {
        info!("config: using defaults for {}", defaulted.join(", "));
    }
    run.model.validate()?;
    Ok(run)
}

/// Parses model fields only; training keys are rejected.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let pairs = key_values(text)?;
    let mut cfg = base_profile(&pairs)?;
    for &(line, k, v) in &pairs {
        if k != "profile" && !apply_model(&mut cfg, k, v)? {
            return Err(Error::Config(format!("line {line}: unknown model key `{k}`")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn render_model_config(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("d_model", cfg.d_model.to_string());
    put("heads", cfg.heads.to_string());
    put("period", cfg.period.to_string());
    put("audio_rate", format!("{:?}", cfg.audio_rate));
    put("motion_rate", format!("{:?}", cfg.motion_rate));
    put("feature_dim", cfg.feature_dim.to_string());
    put("encoder_dim", cfg.encoder_dim.to_string());
    put("encoder_heads", cfg.encoder_heads.to_string());
    put("encoder_layers", cfg.encoder_layers.to_string());
    put("encoder_ff_dim", cfg.encoder_ff_dim.to_string());
    put("decoder_layers", cfg.decoder_layers.to_string());
    put("ff_dim", cfg.ff_dim.to_string());
    put("vertices", cfg.vertices.to_string());
    put("identities", cfg.identities.to_string());
    put("pe_mode", cfg.pe_mode.to_string());
    put("activation", cfg.activation.to_string());
    put("output_space", cfg.output_space.to_string());
    put("extractor", format_conv_stack(&cfg.extractor));
    put("ln_eps", format!("{:?}", cfg.ln_eps));
    s
}

pub fn render_run_config(run: &RunConfig) -> String {
    let t = &run.train;
    let mut s = render_model_config(&run.model);
    let clip = t.clip_norm.map_or("none".to_string(), |c| format!("{c:?}"));
    let lr_final = t.lr_final.map_or("none".to_string(), |c| format!("{c:?}"));
    let _ = write!(
        s,
        "epochs = {}\nseed = {}\nlr = {:?}\nlr_final = {lr_final}\nwarmup_steps = {}\nbeta1 = {:?}\nbeta2 = {:?}\nadam_eps = {:?}\nclip_norm = {clip}\n\
         freeze_extractor = {}\ndetach_rollout = {}\n",
        t.epochs, t.seed, t.adam.lr, t.warmup_steps, t.adam.beta1, t.adam.beta2, t.adam.eps, t.freeze_extractor, t.detach_rollout
    );
    s
}
