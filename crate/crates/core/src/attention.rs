//! Biased scaled dot-product attention and its multi-head wrapper.

use crate::error::{Error, Result};
use crate::positional::{BiasKind, BiasMatrix};
use crate::tensor::{Matrix, Tape, Var};

/// Projection weights of one multi-head attention block, as tape handles.
///
/// `wq`, `wk`, `wv` map model rows to `H·d_k` columns; `wo` maps the
/// concatenated heads back to the model dimension.
#[derive(Clone, Copy, Debug)]
pub struct AttentionProjections {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Per-head attention weights captured during one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub module: String,
    pub layer: usize,
    pub step: usize,
    pub heads: Vec<Matrix>,
}

impl AttentionRecord {
    /// Elementwise mean of the head weight matrices.
    pub fn mean_over_heads(&self) -> Matrix {
        let (r, c) = self.heads[0].shape();
        let mut acc = Matrix::zeros(r, c);
        for h in &self.heads {
            acc.add_assign(h).expect("head weights share a shape");
        }
        acc.scale(1.0 / self.heads.len() as f64)
    }
}

/// `softmax(q·kᵀ/√d_k + bias)·v` on the tape. Returns `(output, weights)`.
pub fn biased_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<&Matrix>,
) -> Result<(Var, Var)> {
    let (t, dk) = tape.shape(q);
    let (s, dk2) = tape.shape(k);
    let (s2, _) = tape.shape(v);
    if dk != dk2 {
        return Err(Error::dims("attention q/k", (t, dk), (s, dk2)));
    }
    if s != s2 {
        return Err(Error::dims("attention k/v", (s, dk2), tape.shape(v)));
    }
    if let Some(b) = bias {
        if b.shape() != (t, s) {
            return Err(Error::dims("attention bias", (t, s), b.shape()));
        }
    }
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax_rows(scaled, bias)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Untaped convenience wrapper around [`biased_attention`].
pub fn attend(q: &Matrix, k: &Matrix, v: &Matrix, bias: Option<&Matrix>) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let (out, w) = biased_attention(&mut tape, qv, kv, vv, bias)?;
    Ok((tape.value(out).clone(), tape.value(w).clone()))
}

/// Multi-head attention of `x_q` over `x_kv`.
///
/// With `slopes`, head `h` uses `base_bias · slopes[h]` (a temporal bias);
/// otherwise every head shares `base_bias` unchanged. When `record` is
/// given, the per-head weights are captured under that label.
#[allow(clippy::too_many_arguments)]
pub fn mh_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    proj: &AttentionProjections,
    heads: usize,
    base_bias: Option<&BiasMatrix>,
    slopes: Option<&[f64]>,
    record: Option<(&str, usize, usize)>,
) -> Result<(Var, Option<AttentionRecord>)> {
    let (t, d) = tape.shape(x_q);
    let (s, d2) = tape.shape(x_kv);
    if d != d2 {
        return Err(Error::dims("mh_attention inputs", (t, d), (s, d2)));
    }
    if let Some(sl) = slopes {
        if sl.len() != heads {
            return Err(Error::Contract(format!("{} slopes for {heads} heads", sl.len())));
        }
        if base_bias.map(|b| b.kind) != Some(BiasKind::Temporal) {
            return Err(Error::Contract("head slopes apply only to a temporal bias".into()));
        }
    }
    let q = tape.matmul(x_q, proj.wq)?;
    let k = tape.matmul(x_kv, proj.wk)?;
    let v = tape.matmul(x_kv, proj.wv)?;
    let inner = tape.shape(q).1;
    if heads == 0 || !inner.is_multiple_of(heads) || tape.shape(k).1 != inner || tape.shape(v).1 != inner {
        return Err(Error::Contract(format!(
            "projection width {inner} does not split into {heads} heads"
        )));
    }
    let dh = inner / heads;

    let mut outputs = Vec::with_capacity(heads);
    let mut captured = Vec::new();
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let head_bias = match (base_bias, slopes) {
            (Some(b), Some(sl)) => Some(b.scaled(sl[h]).values),
            (Some(b), None) => Some(b.values.clone()),
            (None, _) => None,
        };
        let (out, w) = biased_attention(tape, qh, kh, vh, head_bias.as_ref())?;
        if record.is_some() {
            captured.push(tape.value(w).clone());
        }
        outputs.push(out);
    }
    let concat = if heads == 1 { outputs[0] } else { tape.concat_cols(&outputs)? };
    let projected = tape.matmul(concat, proj.wo)?;
    let rec = record.map(|(module, layer, step)| AttentionRecord {
        module: module.to_string(),
        layer,
        step,
        heads: captured,
    });
    Ok((projected, rec))
}

/// Reference attention computed with explicit scalar loops and direct
/// exponentials. Intended as a test oracle.
pub fn attention_oracle(q: &Matrix, k: &Matrix, v: &Matrix, bias: Option<&Matrix>) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::dims("oracle q/k", q.shape(), k.shape()));
    }
    if k.rows() != v.rows() {
        return Err(Error::dims("oracle k/v", k.shape(), v.shape()));
    }
    let (t, s, dk, dv) = (q.rows(), k.rows(), q.cols(), v.cols());
    let scale = (dk as f64).sqrt();
    let mut out = Matrix::zeros(t, dv);
    for i in 0..t {
        let mut scores = vec![0.0; s];
        for (j, score) in scores.iter_mut().enumerate() {
            let mut dot = 0.0;
            for c in 0..dk {
                dot += q.get(i, c) * k.get(j, c);
            }
            *score = dot / scale + bias.map_or(0.0, |b| b.get(i, j));
        }
        let mut best = f64::NEG_INFINITY;
        for &sc in &scores {
            if sc > best {
                best = sc;
            }
        }
        if best == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: i });
        }
        let mut denom = 0.0;
        let mut weights = vec![0.0; s];
        for j in 0..s {
            if scores[j] != f64::NEG_INFINITY {
                weights[j] = (scores[j] - best).exp();
                denom += weights[j];
            }
        }
        for j in 0..s {
            let w = weights[j] / denom;
            for c in 0..dv {
                let cur = out.get(i, c);
                out.set(i, c, cur + w * v.get(j, c));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::positional::{alignment_bias, head_slopes, temporal_bias};
    use crate::tensor::testing::random_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_queries_average_values() {
        let v = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let (out, w) = attend(&Matrix::zeros(2, 2), &Matrix::zeros(4, 2), &v, None).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                assert!((w.get(i, j) - 0.25).abs() < 1e-15);
            }
            for c in 0..3 {
                let mean = (0..4).map(|r| v.get(r, c)).sum::<f64>() / 4.0;
                assert!((out.get(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let q = random_matrix(&mut r, 3, 4, 2.0);
        let k = random_matrix(&mut r, 1, 4, 2.0);
        let v = random_matrix(&mut r, 1, 5, 2.0);
        let (out, _) = attend(&q, &k, &v, None).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn matches_loop_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let q = random_matrix(&mut r, 3, 4, 1.0);
        let k = random_matrix(&mut r, 5, 4, 1.0);
        let v = random_matrix(&mut r, 5, 4, 1.0);
        let bias = random_matrix(&mut r, 3, 5, 1.0);
        let (out, _) = attend(&q, &k, &v, Some(&bias)).unwrap();
        let oracle = attention_oracle(&q, &k, &v, Some(&bias)).unwrap();
        assert!(out.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn masked_column_gets_zero_weight() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let q = random_matrix(&mut r, 2, 3, 1.0);
        let k = random_matrix(&mut r, 3, 3, 1.0);
        let v = random_matrix(&mut r, 3, 2, 1.0);
        let mut bias = Matrix::zeros(2, 3);
        bias.set(0, 1, f64::NEG_INFINITY);
        bias.set(1, 1, f64::NEG_INFINITY);
        let (_, w) = attend(&q, &k, &v, Some(&bias)).unwrap();
        assert_eq!(w.get(0, 1), 0.0);
        assert_eq!(w.get(1, 1), 0.0);
        // the oracle must also ignore the masked value row
        let mut v2 = v.clone();
        v2.row_mut(1).copy_from_slice(&[1e6, -1e6]);
        let a = attention_oracle(&q, &k, &v, Some(&bias)).unwrap();
        let b = attention_oracle(&q, &k, &v2, Some(&bias)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let bias = Matrix::filled(1, 2, f64::NEG_INFINITY);
        let z = Matrix::zeros(1, 2);
        let kv = Matrix::zeros(2, 2);
        assert!(matches!(attend(&z, &kv, &kv, Some(&bias)), Err(Error::DegenerateRow { row: 0 })));
        assert!(matches!(attention_oracle(&z, &kv, &kv, Some(&bias)), Err(Error::DegenerateRow { row: 0 })));
    }

    fn projections(tape: &mut Tape, r: &mut ChaCha8Rng, d: usize) -> (AttentionProjections, [Matrix; 4]) {
        let ms = [
            random_matrix(r, d, d, 0.7),
            random_matrix(r, d, d, 0.7),
            random_matrix(r, d, d, 0.7),
            random_matrix(r, d, d, 0.7),
        ];
        let p = AttentionProjections {
            wq: tape.constant(ms[0].clone()),
            wk: tape.constant(ms[1].clone()),
            wv: tape.constant(ms[2].clone()),
            wo: tape.constant(ms[3].clone()),
        };
        (p, ms)
    }

    #[test]
    fn single_head_is_attention_then_output_projection() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let (p, ms) = projections(&mut tape, &mut r, 4);
        let x = random_matrix(&mut r, 3, 4, 1.0);
        let xv = tape.constant(x.clone());
        let bias = temporal_bias(3, 2, 1.0);
        let (out, _) = mh_attention(&mut tape, xv, xv, &p, 1, Some(&bias), Some(&[0.5]), None).unwrap();
        let q = x.matmul(&ms[0]).unwrap();
        let k = x.matmul(&ms[1]).unwrap();
        let v = x.matmul(&ms[2]).unwrap();
        let (att, _) = attend(&q, &k, &v, Some(&bias.scaled(0.5).values)).unwrap();
        let expected = att.matmul(&ms[3]).unwrap();
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn two_heads_use_their_own_slopes() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let d = 4;
        let mut tape = Tape::new();
        let (p, ms) = projections(&mut tape, &mut r, d);
        let x = random_matrix(&mut r, 4, d, 1.0);
        let xv = tape.constant(x.clone());
        let slopes = head_slopes(2).unwrap();
        assert_eq!(slopes, vec![2f64.powi(-4), 2f64.powi(-8)]);
        let base = temporal_bias(4, 1, 1.0);
        let (out, rec) =
            mh_attention(&mut tape, xv, xv, &p, 2, Some(&base), Some(&slopes), Some(("self", 0, 3)))
                .unwrap();
        assert_eq!(tape.shape(out), (4, d));
        let rec = rec.unwrap();
        assert_eq!(rec.heads.len(), 2);
        let q = x.matmul(&ms[0]).unwrap();
        let k = x.matmul(&ms[1]).unwrap();
        for h in 0..2 {
            let qh = q.slice_cols(h * 2, 2);
            let kh = k.slice_cols(h * 2, 2);
            // direct per-head weights with bias −m_h·(i−j)
            for i in 0..4 {
                let mut scores = [f64::NEG_INFINITY; 4];
                for j in 0..=i {
                    let dot: f64 = (0..2).map(|c| qh.get(i, c) * kh.get(j, c)).sum();
                    scores[j] = dot / 2f64.sqrt() - slopes[h] * (i - j) as f64;
                }
                let z: f64 = scores.iter().filter(|s| s.is_finite()).map(|s| s.exp()).sum();
                for j in 0..4 {
                    let expected = if j <= i { scores[j].exp() / z } else { 0.0 };
                    assert!((rec.heads[h].get(i, j) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn alignment_bias_is_shared_across_heads() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let (p, _) = projections(&mut tape, &mut r, 4);
        let xq = tape.constant(random_matrix(&mut r, 3, 4, 1.0));
        let xkv = tape.constant(random_matrix(&mut r, 6, 4, 1.0));
        let bias = alignment_bias(3, 3, 2).unwrap();
        let (_, rec) =
            mh_attention(&mut tape, xq, xkv, &p, 2, Some(&bias), None, Some(("cross", 0, 2))).unwrap();
        for w in rec.unwrap().heads {
            for i in 0..3 {
                for j in 0..6 {
                    assert_eq!(w.get(i, j) > 0.0, 2 * i <= j && j < 2 * i + 2);
                }
            }
        }
        assert!(mh_attention(&mut tape, xq, xkv, &p, 2, Some(&bias), Some(&[1.0, 1.0]), None).is_err());
    }

    #[test]
    fn mean_over_heads_averages() {
        let rec = AttentionRecord {
            module: "x".into(),
            layer: 0,
            step: 0,
            heads: vec![Matrix::filled(1, 2, 1.0), Matrix::filled(1, 2, 0.0)],
        };
        assert_eq!(rec.mean_over_heads(), Matrix::filled(1, 2, 0.5));
    }
}
