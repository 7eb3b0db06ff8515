use std::path::Path;
use std::process::{Command, Output};

use faceformer::io::{load_matrix, save_matrix};
use faceformer::Matrix;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faceformer"))
        .args(args)
        .current_dir(dir)
        .env("FF_LOG", "quiet")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn trained(dir: &Path) {
    assert!(run(dir, &["--seed", "2", "gen-synthetic", "--out", "data", "--sequences", "1", "--frames", "5"]).status.success());
    std::fs::write(dir.join("run.cfg"), "# tiny\nepochs = 1\nencoder_layers = 1\n").unwrap();
    let o = run(dir, &["train", "--config", "run.cfg", "--data", "data", "--out", "m.ffck"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn eval_lip_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    save_matrix(&dir.path().join("a.f32mat"), &Matrix::from_fn(4, 9, |i, j| (i + j) as f64)).unwrap();
    std::fs::write(dir.path().join("lips.txt"), "0\n2\n").unwrap();
    let o = run(dir.path(), &["eval-lip", "a.f32mat", "a.f32mat", "lips.txt"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0");
}

#[test]
fn eval_lip_reports_bad_index() {
    let dir = tempfile::tempdir().unwrap();
    save_matrix(&dir.path().join("a.f32mat"), &Matrix::zeros(2, 6)).unwrap();
    std::fs::write(dir.path().join("lips.txt"), "5\n").unwrap();
    let o = run(dir.path(), &["eval-lip", "a.f32mat", "a.f32mat", "lips.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out of range"));
}

#[test]
fn infer_honours_frames() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = run(
        dir.path(),
        &["infer", "--checkpoint", "m.ffck", "--audio", "data/audio_000.f32mat", "--identity", "1", "--frames", "7", "--out", "p.f32mat"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_matrix(&dir.path().join("p.f32mat")).unwrap().shape(), (7, 30));
    assert!(std::fs::read_to_string(dir.path().join("m.loss.csv")).unwrap().starts_with("epoch,step,sample,loss,rmse\n"));
}

#[test]
fn export_attn_writes_normalized_maps() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = run(
        dir.path(),
        &["export-attn", "--checkpoint", "m.ffck", "--audio", "data/audio_001.f32mat", "--identity", "0", "--out-dir", "attn"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["decoder_self_layer0.csv", "decoder_cross_layer0.csv", "encoder_self_layer0.csv"] {
        let text = std::fs::read_to_string(dir.path().join("attn").join(name)).unwrap();
        let rows = faceformer::eval::read_attention_csv(&text).unwrap();
        assert!(!rows.is_empty());
        for r in rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{name}");
        }
    }
}

#[test]
fn inspect_reports_headers() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = run(dir.path(), &["inspect", "m.ffck"]);
    assert!(stdout(&o).starts_with("FFCK version 1"));
    let o = run(dir.path(), &["inspect", "data/motion_000.f32mat"]);
    assert_eq!(stdout(&o).trim(), "F32M version 1 rows 5 cols 30");
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["infer", "--nope"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &[]).status.code(), Some(1));
    let missing = run(dir.path(), &["inspect", "nothing.ffck"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("nothing.ffck"));
    std::fs::write(dir.path().join("bad.cfg"), "hedas = 4\n").unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    let o = run(dir.path(), &["train", "--config", "bad.cfg", "--data", "data", "--out", "m.ffck"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `hedas`"));
    assert!(!dir.path().join("m.ffck").exists());
}

#[test]
fn failed_train_leaves_no_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["gen-synthetic", "--out", "data", "--sequences", "1", "--frames", "5", "--vertices", "4"]).status.success());
    std::fs::write(dir.path().join("run.cfg"), "epochs = 1\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "run.cfg", "--data", "data", "--out", "m.ffck"]);
    assert_eq!(o.status.code(), Some(2));
    let mut left: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    left.sort();
    assert_eq!(left, ["data", "run.cfg"]);
}
