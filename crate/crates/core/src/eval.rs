//! Lip vertex error and attention-weight export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attention::AttentionRecord;
use crate::decoder::MotionSequence;
use crate::error::{Error, Result};
use crate::io::atomic_write;

/// 0-based vertex indices of the lip region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LipIndexSet {
    indices: Vec<usize>,
}

impl LipIndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyLipSet);
        }
        let unique: BTreeSet<_> = indices.iter().collect();
        if unique.len() != indices.len() {
            return Err(Error::Contract("duplicate lip vertex index".into()));
        }
        Ok(Self { indices })
    }

    /// Parses newline-separated 0-based integers; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let indices = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.parse::<usize>().map_err(|_| Error::Format(format!("bad lip index `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn check(&self, vertices: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= vertices) {
            Some(&index) => Err(Error::LipIndexOutOfRange { index, vertices }),
            None => Ok(()),
        }
    }
}

/// Mean over frames of the largest Euclidean lip-vertex deviation.
pub fn lip_error(pred: &MotionSequence, truth: &MotionSequence, lips: &LipIndexSet) -> Result<f64> {
    if pred.frames.shape() != truth.frames.shape() {
        return Err(Error::dims("lip_error", pred.frames.shape(), truth.frames.shape()));
    }
    if truth.is_empty() {
        return Err(Error::EmptySequence);
    }
    lips.check(truth.vertices())?;
    let mut total = 0.0;
    for t in 0..truth.len() {
        let worst = lips
            .indices
            .iter()
            .map(|&v| {
                let (p, q) = (pred.vertex(t, v), truth.vertex(t, v));
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        total += worst;
    }
    Ok(total / truth.len() as f64)
}

/// Average of [`lip_error`] over `(prediction, truth)` pairs.
pub fn corpus_lip_error(pairs: &[(MotionSequence, MotionSequence)], lips: &LipIndexSet) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("no sequences to evaluate".into()));
    }
    let mut sum = 0.0;
    for (p, t) in pairs {
        sum += lip_error(p, t, lips)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Renders one head-averaged record as CSV with `#` metadata lines.
pub fn attention_csv(record: &AttentionRecord) -> String {
    let m = record.mean_over_heads();
    let mut out = String::new();
    let _ = writeln!(out, "# module={}", record.module);
    let _ = writeln!(out, "# layer={}", record.layer);
    let _ = writeln!(out, "# step={}", record.step);
    let _ = writeln!(out, "# heads={}", record.heads.len());
    let _ = writeln!(out, "# rows={} cols={}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes one CSV per record into `dir` as `<module>_layer<l>.csv`.
pub fn export_attention(records: &[AttentionRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Contract("no attention records to export".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(records.len());
    for rec in records {
        let path = dir.join(format!("{}_layer{}.csv", rec.module, rec.layer));
        atomic_write(&path, attention_csv(rec).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Parses a CSV written by [`export_attention`], skipping metadata lines.
pub fn read_attention_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad value `{v}`"))))
                .collect()
        })
        .collect()
}
