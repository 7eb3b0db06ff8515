//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use faceformer::attention::{attend, attention_oracle};
use faceformer::decoder::{build_inputs, decoder_layer};
use faceformer::encoder::encode_on_tape;
use faceformer::io::{read_checkpoint, read_matrix, write_checkpoint, write_matrix};
use faceformer::positional::{alignment_bias, head_slopes, ppe, temporal_bias, PositionalTable};
use faceformer::synthetic::{generate, random_features, SyntheticSpec};
use faceformer::tensor::{AdamConfig, Activation, Matrix, Tape};
use faceformer::training::{loss_and_gradients, mse_loss, train};
use faceformer::{AudioInput, FaceFormer, ModelConfig, MotionSequence, OutputSpace, PeMode, TrainOptions, TrainingSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn bias_suite() -> Outcome {
    let slopes = head_slopes(4).map_err(|e| e.to_string())?;
    let expected = [0.25, 0.0625, 0.015625, 0.00390625];
    ensure(slopes == expected, || format!("head_slopes(4) = {slopes:?}"))?;

    for m in head_slopes(8).map_err(|e| e.to_string())? {
        for t in 1..=64 {
            let b = temporal_bias(t, 1, m);
            for i in 0..t {
                for j in 0..t {
                    let oracle = if j <= i { -m * (i - j) as f64 } else { f64::NEG_INFINITY };
                    let got = b.values.get(i, j);
                    ensure(got == oracle, || format!("t={t} m={m} ({i},{j}): {got} vs {oracle}"))?;
                }
            }
        }
    }

    let mut rows_checked = 0;
    for total in 1..=16 {
        for k in 1..=4 {
            let b = alignment_bias(total, total, k).map_err(|e| e.to_string())?;
            let mut owner = vec![usize::MAX; k * total];
            for i in 0..total {
                let support: Vec<usize> = (0..k * total).filter(|&j| b.values.get(i, j) == 0.0).collect();
                ensure(support.len() == k, || format!("T={total} k={k} row {i} support {}", support.len()))?;
                for j in 0..k * total {
                    let v = b.values.get(i, j);
                    ensure(v == 0.0 || v == f64::NEG_INFINITY, || format!("entry {v}"))?;
                }
                for j in support {
                    ensure(owner[j] == usize::MAX, || format!("column {j} claimed twice"))?;
                    owner[j] = i;
                }
                rows_checked += 1;
            }
            ensure(owner.iter().all(|&o| o != usize::MAX), || format!("T={total} k={k}: uncovered column"))?;
        }
    }
    Ok(format!("slopes exact, p=1 bias exact for t<=64, {rows_checked} alignment rows partition [0,kT)"))
}

fn attention_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for n in 0..200 {
        let d = rng.random_range(1..=8);
        let dv = rng.random_range(1..=8);
        let (t, s, bias) = if n % 2 == 0 {
            let t = rng.random_range(1..=8);
            let p = rng.random_range(1..=4);
            let slope = head_slopes(4).unwrap()[rng.random_range(0..4)];
            (t, t, temporal_bias(t, p, slope).values)
        } else {
            let t = rng.random_range(1..=8usize);
            let k = rng.random_range(1..=8 / t);
            (t, k * t, alignment_bias(t, t, k).map_err(|e| e.to_string())?.values)
        };
        let q = rand_matrix(&mut rng, t, d).scale(3.0);
        let k = rand_matrix(&mut rng, s, d).scale(3.0);
        let v = rand_matrix(&mut rng, s, dv);
        let (fast, _) = attend(&q, &k, &v, Some(&bias)).map_err(|e| e.to_string())?;
        let slow = attention_oracle(&q, &k, &v, Some(&bias)).map_err(|e| e.to_string())?;
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    ensure(worst < 1e-10, || format!("max abs diff {worst:.3e}"))?;
    Ok(format!("200 instances, max abs diff {worst:.3e} < 1e-10"))
}

fn audit_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        period: 2,
        feature_dim: 4,
        encoder_dim: 8,
        encoder_heads: 2,
        encoder_layers: 1,
        encoder_ff_dim: 16,
        decoder_layers: 1,
        ff_dim: 16,
        vertices: 3,
        identities: 2,
        ..ModelConfig::synthetic()
    }
}

/// Relative error floor for entries whose gradient is essentially zero.
const AUDIT_FLOOR: f64 = 1e-6;

fn gradient_audit() -> Outcome {
    let cfg = audit_config();
    let model = FaceFormer::new(cfg.clone(), 17).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = TrainingSample {
        audio: AudioInput::features(random_features(&mut rng, 8, 4), cfg.audio_rate),
        motion: MotionSequence::new(rand_matrix(&mut rng, 4, 9), cfg.motion_rate).unwrap(),
        identity: 1,
    };
    let (_, grads) = loss_and_gradients(&model, &sample, true, false).map_err(|e| e.to_string())?;

    let loss_of = |m: &FaceFormer| -> f64 {
        let pred = m.autoregress(&sample.audio, sample.identity, Some(4)).unwrap();
        mse_loss(&pred, &sample.motion).unwrap()
    };
    let h = 1e-5;
    let (mut worst, mut worst_at, mut checked) = (0.0f64, String::new(), 0usize);
    let mut probe = model.clone();
    for (name, g) in grads.iter() {
        if !FaceFormer::is_trainable(name, true) {
            continue;
        }
        for idx in 0..g.len() {
            let orig = model.params.get(name).unwrap().as_slice()[idx];
            probe.params.get_mut(name).unwrap().as_mut_slice()[idx] = orig + h;
            let up = loss_of(&probe);
            probe.params.get_mut(name).unwrap().as_mut_slice()[idx] = orig - h;
            let down = loss_of(&probe);
            probe.params.get_mut(name).unwrap().as_mut_slice()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.as_slice()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(AUDIT_FLOOR);
            if rel > worst {
                worst = rel;
                worst_at = format!("{name}[{idx}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
            checked += 1;
        }
    }
    ensure(worst < 1e-4, || format!("relative error {worst:.3e} at {worst_at}"))?;
    Ok(format!("{checked} entries, max relative error {worst:.3e} < 1e-4"))
}

fn causality_and_prefix() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for seed in 0..4u64 {
        let cfg = ModelConfig {
            pe_mode: [PeMode::TbPpe, PeMode::Alibi, PeMode::OriginalPe, PeMode::TbPpe][seed as usize],
            decoder_layers: 2,
            ..audit_config()
        };
        let model = FaceFormer::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
        let audio = AudioInput::features(random_features(&mut rng, 24, 4), cfg.audio_rate);
        let encoded = model.encode(&audio, None).map_err(|e| e.to_string())?;
        let total = encoded.motion_len;
        let full = model.decode(&encoded, 0, total).map_err(|e| e.to_string())?;
        for steps in 1..total {
            let part = model.decode(&encoded, 0, steps).map_err(|e| e.to_string())?;
            ensure(part.frames == full.frames.slice_rows(0, steps), || {
                format!("seed {seed}: {steps}-step prefix differs from full run")
            })?;
            cases += 1;
        }

        // Perturb decoder inputs after row i and compare the stack's outputs.
        for i in 0..total - 1 {
            let run = |perturb: bool| -> Matrix {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, true);
                let a = encode_on_tape(&mut tape, &bound, &cfg, &audio, total, None).unwrap();
                let positions = PositionalTable::new(&cfg, total);
                let mut r = ChaCha8Rng::seed_from_u64(i as u64);
                let mut prev_rows = rand_matrix(&mut r, total - 1, cfg.motion_dim());
                if perturb {
                    for row in i..total - 1 {
                        for v in prev_rows.row_mut(row) {
                            *v += 10.0;
                        }
                    }
                }
                let prev: Vec<_> = (0..total - 1).map(|s| tape.constant(prev_rows.slice_rows(s, 1))).collect();
                let mut x = build_inputs(&mut tape, &bound, &cfg, 0, &prev, &positions).unwrap();
                for layer in 0..cfg.decoder_layers {
                    x = decoder_layer(&mut tape, &bound, &cfg, layer, x, a, total, None).unwrap();
                }
                tape.value(x).clone()
            };
            let (base, bumped) = (run(false), run(true));
            ensure(base.slice_rows(0, i + 1) == bumped.slice_rows(0, i + 1), || {
                format!("seed {seed}: output rows <= {i} moved after perturbing later inputs")
            })?;
            ensure(base.slice_rows(i + 1, 1) != bumped.slice_rows(i + 1, 1), || "perturbation had no effect".into())?;
            cases += 1;
        }
    }
    Ok(format!("{cases} prefix/perturbation cases bitwise equal"))
}

fn ppe_suite() -> Outcome {
    let mut checked = 0;
    for base in [ModelConfig::synthetic(), ModelConfig::biwi(), ModelConfig::vocaset()] {
        let p = base.period;
        let d = base.d_model;
        for t in 0..4 * p {
            ensure(ppe(t, &base) == ppe(t + p, &base), || format!("p={p}: ppe({t}) != ppe({})", t + p))?;
            let orig = ModelConfig { pe_mode: PeMode::OriginalPe, ..base.clone() };
            let got = ppe(t, &orig);
            for i in 0..d / 2 {
                let w = (t as f64) / 10000f64.powf((2 * i) as f64 / d as f64);
                ensure((got[2 * i] - w.sin()).abs() < 1e-12 && (got[2 * i + 1] - w.cos()).abs() < 1e-12, || {
                    format!("original_pe t={t} component {i}")
                })?;
            }
            let alibi = ModelConfig { pe_mode: PeMode::Alibi, ..base.clone() };
            ensure(ppe(t, &alibi).iter().all(|&v| v == 0.0), || format!("alibi ppe({t}) not zero"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} steps: periodic, original sinusoid, zero alibi"))
}

struct Overfit {
    model: FaceFormer,
    corpus: Vec<TrainingSample>,
}

fn overfit_options() -> TrainOptions {
    TrainOptions {
        epochs: 250,
        seed: 0,
        adam: AdamConfig { lr: 1e-2, beta2: 0.99, ..AdamConfig::default() },
        lr_final: Some(1e-6),
        warmup_steps: 100,
        clip_norm: Some(1.0),
        ..TrainOptions::default()
    }
}

fn fit(pe_mode: PeMode) -> Result<Overfit, String> {
    let corpus = generate(&SyntheticSpec::default()).map_err(|e| e.to_string())?.samples;
    let cfg = ModelConfig { pe_mode, output_space: OutputSpace::Offset, ..ModelConfig::synthetic() };
    let mut model = FaceFormer::new(cfg, 0).map_err(|e| e.to_string())?;
    let report = train(&mut model, &corpus, &overfit_options()).map_err(|e| e.to_string())?;
    if report.history.len() > 2000 {
        return Err(format!("{} optimizer steps", report.history.len()));
    }
    Ok(Overfit { model, corpus })
}

fn held_out_audio(frames: usize, seed: u64) -> AudioInput {
    let spec = SyntheticSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioInput::features(random_features(&mut rng, spec.audio_len_for(frames), spec.feature_dim), spec.audio_rate)
}

fn mean_vertex_distance(a: &MotionSequence, b: &MotionSequence) -> f64 {
    let mut sum = 0.0;
    for t in 0..a.len() {
        for v in 0..a.vertices() {
            let (p, q) = (a.vertex(t, v), b.vertex(t, v));
            sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        }
    }
    sum / (a.len() * a.vertices()) as f64
}

fn max_step_displacement(m: &MotionSequence) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 1..m.len() {
        for v in 0..m.vertices() {
            let (p, q) = (m.vertex(t, v), m.vertex(t - 1, v));
            worst = worst.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
        }
    }
    worst
}

fn overfit_experiment(fitted: &Overfit) -> Outcome {
    let (mut se, mut amp, mut n) = (0.0, 0.0, 0.0);
    for s in &fitted.corpus {
        let pred = fitted.model.autoregress(&s.audio, s.identity, Some(s.motion.len())).map_err(|e| e.to_string())?;
        se += mse_loss(&pred, &s.motion).map_err(|e| e.to_string())?;
        amp += s.motion.frames.sum_squares();
        n += (s.motion.len() * s.motion.vertices()) as f64;
    }
    let rmse = (se / n).sqrt();
    let rms = (amp / n).sqrt();
    let ratio = rmse / rms;

    let audio = held_out_audio(20, 1000);
    let encoded = fitted.model.encode(&audio, None).map_err(|e| e.to_string())?;
    let full = fitted.model.decode(&encoded, 1, 20).map_err(|e| e.to_string())?;
    let part = fitted.model.decode(&encoded, 1, 11).map_err(|e| e.to_string())?;
    ensure(part.frames == full.frames.slice_rows(0, 11), || "trained model prefix differs".into())?;
    let a = fitted.model.autoregress(&audio, 0, None).map_err(|e| e.to_string())?;
    let b = fitted.model.autoregress(&audio, 1, None).map_err(|e| e.to_string())?;
    let dist = mean_vertex_distance(&a, &b);
    let detail = format!(
        "rmse {rmse:.4e} = {:.3}% of rms {rms:.4}, held-out identity distance {dist:.4} = {:.0}x rmse",
        100.0 * ratio,
        dist / rmse
    );
    ensure(ratio < 0.01 && dist > 10.0 * rmse, || detail.clone())?;
    Ok(detail)
}

fn long_sequence(fitted: &Overfit, original: &Overfit) -> Outcome {
    let mut reference: f64 = 0.0;
    for s in &fitted.corpus {
        let pred = fitted.model.autoregress(&s.audio, s.identity, None).map_err(|e| e.to_string())?;
        reference = reference.max(max_step_displacement(&pred));
    }
    let audio = held_out_audio(80, 2000);
    let long = fitted.model.autoregress(&audio, 0, None).map_err(|e| e.to_string())?;
    ensure(long.len() == 80, || format!("{} frames", long.len()))?;
    ensure(long.frames.is_finite(), || "non-finite output".into())?;
    let jump = max_step_displacement(&long);
    let detail = format!("tb_ppe 80 frames, max step {jump:.4} vs training-length {reference:.4}");
    ensure(jump <= 5.0 * reference, || detail.clone())?;
    let orig = original.model.autoregress(&audio, 0, None).map_err(|e| format!("original_pe: {e}"))?;
    ensure(orig.len() == 80, || "original_pe run incomplete".into())?;
    Ok(format!("{detail} (ratio {:.2}); original_pe run completed", jump / reference))
}

fn cli(args: &[&str], dir: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_faceformer"))
        .args(args)
        .current_dir(dir)
        .env("FF_LOG", "quiet")
        .output()
        .expect("run cli")
        .status
        .code()
        .unwrap_or(-1)
}

fn format_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = rand_matrix(&mut rng, 7, 5);
    let back = read_matrix(&write_matrix(&m).unwrap()).map_err(|e| e.to_string())?;
    ensure(back.as_slice().iter().zip(m.as_slice()).all(|(b, a)| *b == *a as f32 as f64), || {
        "matrix round trip".into()
    })?;

    let model = FaceFormer::new(ModelConfig { activation: Activation::Tanh, ..audit_config() }, 3).unwrap();
    let bytes = write_checkpoint(&model).unwrap();
    ensure(read_checkpoint(&bytes).map_err(|e| e.to_string())? == model, || "checkpoint round trip".into())?;
    for i in 0..bytes.len() {
        let mut b = bytes.clone();
        b[i] ^= 0x01;
        ensure(read_checkpoint(&b).is_err(), || format!("flip at byte {i} undetected"))?;
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(dir.join("run.cfg"), "epochs = 2\nlr = 1e-3\n").unwrap();
    let codes = [
        (cli(&["--seed", "4", "gen-synthetic", "--out", "data", "--sequences", "2", "--frames", "6"], dir), 0),
        (cli(&["--seed", "9", "train", "--config", "run.cfg", "--data", "data", "--out", "a.ffck"], dir), 0),
        (cli(&["--seed", "9", "train", "--config", "run.cfg", "--data", "data", "--out", "b.ffck"], dir), 0),
        (cli(&["--help"], dir), 0),
        (cli(&["train", "--bogus-flag"], dir), 1),
        (cli(&["frobnicate"], dir), 1),
        (cli(&["inspect", "missing.ffck"], dir), 2),
    ];
    for (i, (got, want)) in codes.iter().enumerate() {
        ensure(got == want, || format!("cli case {i}: exit {got}, expected {want}"))?;
    }
    let a = std::fs::read(dir.join("a.ffck")).unwrap();
    let b = std::fs::read(dir.join("b.ffck")).unwrap();
    ensure(a == b, || "double-train checkpoints differ".into())?;
    let mut corrupt = a.clone();
    corrupt[a.len() / 2] ^= 0x80;
    std::fs::write(dir.join("c.ffck"), corrupt).unwrap();
    let crc_code = cli(&["inspect", "c.ffck"], dir);
    ensure(crc_code == 2, || format!("corrupt checkpoint exit {crc_code}"))?;
    Ok(format!("round trips exact, {} byte flips detected, exit codes 0/1/2, double-train identical", bytes.len()))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{id}] {name}: {detail} ({secs:.1}s)");
            }
        }
    };

    let s = Instant::now();
    report(1, "bias construction", s, bias_suite());
    let s = Instant::now();
    report(2, "attention oracle equivalence", s, attention_oracle_equivalence());
    let s = Instant::now();
    report(3, "gradient audit", s, gradient_audit());
    let s = Instant::now();
    report(4, "causality and prefix", s, causality_and_prefix());
    let s = Instant::now();
    report(5, "periodic positional encoding", s, ppe_suite());

    let s = Instant::now();
    let fitted = fit(PeMode::TbPpe);
    match &fitted {
        Ok(f) => report(6, "overfit experiment", s, overfit_experiment(f)),
        Err(e) => report(6, "overfit experiment", s, Err(e.clone())),
    }
    let s = Instant::now();
    let outcome = match (&fitted, fit(PeMode::OriginalPe)) {
        (Ok(f), Ok(o)) => long_sequence(f, &o),
        (Err(e), _) => Err(e.clone()),
        (_, Err(e)) => Err(format!("original_pe: {e}")),
    };
    report(7, "long-sequence generalization", s, outcome);
    let s = Instant::now();
    report(8, "format suite", s, format_suite());

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
