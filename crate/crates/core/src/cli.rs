//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
//! format error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use log::{info, LevelFilter};

use crate::error::Error;
use crate::eval::{export_attention, lip_error, LipIndexSet};
use crate::io::{
    atomic_write, inspect_checkpoint, load_audio, load_checkpoint, load_dataset, load_matrix, parse_run_config,
    read_matrix, read_wav, save_checkpoint, save_matrix,
};
use crate::model::FaceFormer;
use crate::synthetic::{generate, write_corpus, SyntheticSpec};
use crate::training::train_with;
use crate::MotionSequence;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "faceformer", version, about = "Speech-driven 3D facial motion synthesis")]
struct Cli {
    /// Seed for every random draw; overrides the config file's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic feature/motion corpus with a known mapping.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        identities: usize,
        #[arg(long, default_value_t = 4)]
        sequences: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 10)]
        vertices: usize,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, default_value_t = 50.0)]
        audio_rate: f64,
        #[arg(long, default_value_t = 25.0)]
        motion_rate: f64,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss log; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict a motion sequence for one audio file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        identity: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the lip vertex error between two motion files.
    EvalLip { pred: PathBuf, truth: PathBuf, lips: PathBuf },
    /// Run one inference and write head-averaged attention maps as CSV.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        identity: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the header of a checkpoint, matrix or WAV file.
    Inspect { file: PathBuf },
}

fn init_logging() {
    let level = match std::env::var("FF_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        Ok("info") => LevelFilter::Info,
        _ => LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

/// Attaches the offending path to I/O failures.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::AtPath { path: path.display().to_string(), source: Box::new(e) }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn execute(cli: Cli) -> crate::Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::GenSynthetic { out: dir, identities, sequences, frames, vertices, feature_dim, audio_rate, motion_rate } => {
            let spec = SyntheticSpec {
                identities,
                sequences,
                frames,
                vertices,
                feature_dim,
                audio_rate,
                motion_rate,
                seed: cli.seed.unwrap_or(0),
            };
            let corpus = generate(&spec)?;
            write_corpus(&dir, &corpus).map_err(at(&dir))?;
            let _ = writeln!(out, "wrote {} sequences to {}", corpus.samples.len(), dir.display());
        }
        Command::Train { config, data, out: ckpt, loss_csv, epochs } => {
            let text = std::fs::read_to_string(&config).map_err(|e| at(&config)(e.into()))?;
            let mut run = parse_run_config(&text).map_err(at(&config))?;
            if let Some(seed) = cli.seed {
                run.train.seed = seed;
            }
            if let Some(n) = epochs {
                run.train.epochs = n;
            }
            let samples = load_dataset(&data, &run.model).map_err(at(&data))?;
            let mut model = FaceFormer::new(run.model, run.train.seed)?;
            let mut csv = String::from("epoch,step,sample,loss,rmse\n");
            let report = train_with(&mut model, &samples, &run.train, |r| {
                let _ = writeln!(csv, "{},{},{},{},{}", r.epoch, r.step, r.sample, r.loss, r.rmse);
            })?;
            save_checkpoint(&ckpt, &model).map_err(at(&ckpt))?;
            let csv_path = loss_csv.unwrap_or_else(|| ckpt.with_extension("loss.csv"));
            atomic_write(&csv_path, csv.as_bytes()).map_err(at(&csv_path))?;
            let last = report.history.last().map_or(f64::NAN, |r| r.rmse);
            info!("trained {} steps", report.history.len());
            let _ = writeln!(out, "steps {} final_rmse {last}", report.history.len());
        }
        Command::Infer { checkpoint, audio, identity, frames, out: dest } => {
            let model = load_checkpoint(&checkpoint).map_err(at(&checkpoint))?;
            let input = load_audio(&audio, &model.config).map_err(at(&audio))?;
            let motion = model.autoregress(&input, identity, frames)?;
            save_matrix(&dest, &motion.frames).map_err(at(&dest))?;
            let _ = writeln!(out, "wrote {} frames to {}", motion.len(), dest.display());
        }
        Command::EvalLip { pred, truth, lips } => {
            let p = MotionSequence::new(load_matrix(&pred).map_err(at(&pred))?, 1.0)?;
            let t = MotionSequence::new(load_matrix(&truth).map_err(at(&truth))?, 1.0)?;
            let text = std::fs::read_to_string(&lips).map_err(|e| at(&lips)(e.into()))?;
            let set = LipIndexSet::parse(&text).map_err(at(&lips))?;
            let _ = writeln!(out, "{}", lip_error(&p, &t, &set)?);
        }
        Command::ExportAttn { checkpoint, audio, identity, frames, out_dir } => {
            let model = load_checkpoint(&checkpoint).map_err(at(&checkpoint))?;
            let input = load_audio(&audio, &model.config).map_err(at(&audio))?;
            let (_, records) = model.autoregress_recorded(&input, identity, frames)?;
            for path in export_attention(&records, &out_dir).map_err(at(&out_dir))? {
                let _ = writeln!(out, "{}", path.display());
            }
        }
        Command::Inspect { file } => {
            let bytes = std::fs::read(&file).map_err(|e| at(&file)(e.into()))?;
            out = describe(&bytes).map_err(at(&file))?;
        }
    }
    Ok(out)
}

fn describe(bytes: &[u8]) -> crate::Result<String> {
    let mut out = String::new();
    match bytes.get(..4) {
        Some(b"F32M") => {
            let m = read_matrix(bytes)?;
            let _ = writeln!(out, "F32M version 1 rows {} cols {}", m.rows(), m.cols());
        }
        Some(b"FFCK") => {
            let h = inspect_checkpoint(bytes)?;
            let _ = writeln!(out, "FFCK version {} entries {} crc {:08x}", h.version, h.entries.len(), h.crc);
            for (name, r, c) in &h.entries {
                let _ = writeln!(out, "{name} {r}x{c}");
            }
        }
        Some(b"RIFF") => {
            let (samples, rate) = read_wav(bytes)?;
            let _ = writeln!(out, "WAV pcm16 mono rate {rate} samples {}", samples.len());
        }
        _ => return Err(Error::Format("unrecognized file type".into())),
    }
    Ok(out)
}
