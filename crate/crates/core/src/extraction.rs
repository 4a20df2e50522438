//! BIO tagging of aspect terms and per-aspect sentiment classification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{softmax, NumericError, Tape, Tensor, Var};
use crate::params::{ModelParams, ParamId};
use crate::types::{AspectSpan, SentimentLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BioTag {
    B,
    I,
    O,
}

impl BioTag {
    pub const ALL: [BioTag; 3] = [BioTag::B, BioTag::I, BioTag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Target tags for `len` tokens carrying `spans`; everything outside a
/// span is `O`.
pub fn gold_tags(len: usize, spans: &[AspectSpan]) -> Vec<BioTag> {
    let mut tags = vec![BioTag::O; len];
    for s in spans {
        for (k, t) in tags[s.start..s.end].iter_mut().enumerate() {
            *t = if k == 0 { BioTag::B } else { BioTag::I };
        }
    }
    tags
}

/// Maximal `B I*` runs as half-open `(start, end)` pairs. An `I` that
/// does not continue a span opens a new one.
pub fn decode_spans(tags: &[BioTag]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            BioTag::B => {
                if let Some(s) = open.take() {
                    spans.push((s, i));
                }
                open = Some(i);
            }
            BioTag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            BioTag::O => {
                if let Some(s) = open.take() {
                    spans.push((s, i));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, tags.len()));
    }
    spans
}

/// Argmax tag per row of an `L x 3` logit matrix (ties to the earlier tag).
pub fn argmax_tags(logits: &Tensor) -> Vec<BioTag> {
    (0..logits.rows()).map(|r| BioTag::ALL[crate::types::argmax(logits.row(r))]).collect()
}

/// Linear tagging head over content-token states: `L x d` to `L x 3`.
pub fn tag_logits(tape: &mut Tape, params: &ModelParams, states: Var) -> Var {
    let w = params.var(tape, ParamId::TagWeight);
    let b = params.var(tape, ParamId::TagBias);
    let z = tape.matmul(states, w);
    tape.add_row(z, b)
}

/// Text and visual aspect embeddings, each `1 x d`.
///
/// The text embedding is the mean of `states` over the span. The visual
/// embedding pools `pool` (patch then caption rows, no `cls`) with
/// attention weights `softmax(e_T pool^T / sqrt(d))`.
pub fn aspect_embeddings(tape: &mut Tape, states: Var, pool: Var, span: (usize, usize)) -> Result<(Var, Var)> {
    let (start, end) = span;
    let (rows, d) = tape.value(states).shape();
    if start >= end {
        return Err(Error::Data(format!("empty aspect span ({start}, {end})")));
    }
    if end > rows {
        return Err(Error::Data(format!("aspect span ({start}, {end}) exceeds {rows} tokens")));
    }
    if tape.value(pool).cols() != d || tape.value(pool).rows() == 0 {
        return Err(NumericError::Shape(format!(
            "visual pool is {:?}, expected rows of width {d}",
            tape.value(pool).shape()
        ))
        .into());
    }
    let span_rows = tape.slice_rows(states, start, end);
    let e_t = tape.mean_rows(span_rows);
    let logits = tape.matmul_nt(e_t, pool);
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let w = tape.softmax_rows(logits);
    let e_i = tape.matmul(w, pool);
    Ok((e_t, e_i))
}

/// `alpha_j = sigmoid(u . [e_T ; e_I] + b_g)` and the convex mix
/// `alpha_j e_T + (1 - alpha_j) e_I`. With `balancing` off the
/// coefficient is pinned to 0.5.
pub fn balance_fuse(tape: &mut Tape, params: &ModelParams, e_t: Var, e_i: Var, balancing: bool) -> Result<(Var, Var)> {
    if tape.value(e_t).shape() != tape.value(e_i).shape() || tape.value(e_t).rows() != 1 {
        return Err(NumericError::Shape(format!(
            "balance_fuse of {:?} and {:?}",
            tape.value(e_t).shape(),
            tape.value(e_i).shape()
        ))
        .into());
    }
    let alpha = if balancing {
        let u = params.var(tape, ParamId::GateWeight);
        let b = params.var(tape, ParamId::GateBias);
        let pair = tape.concat_cols(&[e_t, e_i]);
        let z = tape.matmul(pair, u);
        let z = tape.add(z, b);
        tape.sigmoid(z)
    } else {
        tape.constant(Tensor::scalar(0.5))
    };
    let a = tape.mul_scalar(e_t, alpha);
    let rest = tape.one_minus(alpha);
    let b = tape.mul_scalar(e_i, rest);
    Ok((tape.add(a, b), alpha))
}

pub fn sentiment_logits(tape: &mut Tape, params: &ModelParams, fused: Var) -> Var {
    let w = params.var(tape, ParamId::SentimentWeight);
    let b = params.var(tape, ParamId::SentimentBias);
    let z = tape.matmul(fused, w);
    tape.add_row(z, b)
}

/// Class distribution for a fused aspect vector, outside any tape.
pub fn predict_sentiment(params: &ModelParams, fused: &[f64]) -> Result<[f64; 3]> {
    let w = params.get(ParamId::SentimentWeight);
    if fused.len() != w.rows() {
        return Err(NumericError::Shape(format!("fused width {} vs head {}", fused.len(), w.rows())).into());
    }
    let x = Tensor::row_vector(fused.to_vec());
    let mut z = x.matmul(w)?;
    z.add_assign_scaled(params.get(ParamId::SentimentBias), 1.0);
    z.ensure_finite("sentiment logits")?;
    let p = softmax(z.data());
    Ok([p[0], p[1], p[2]])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AspectPrediction {
    pub span: AspectSpan,
    pub alpha_j: f64,
    pub sentiment_probs: [f64; 3],
}

impl AspectPrediction {
    pub fn new(start: usize, end: usize, alpha_j: f64, sentiment_probs: [f64; 3]) -> Self {
        let sentiment = SentimentLabel::argmax(&sentiment_probs);
        Self { span: AspectSpan::new(start, end, sentiment), alpha_j, sentiment_probs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::params::init_params;
    use BioTag::{B, I, O};

    #[test]
    fn gold_tag_encoding() {
        let spans = [AspectSpan::new(0, 1, SentimentLabel::Positive)];
        assert_eq!(gold_tags(3, &spans), vec![B, O, O]);
        let spans = [AspectSpan::new(1, 3, SentimentLabel::Negative), AspectSpan::new(3, 4, SentimentLabel::Neutral)];
        assert_eq!(gold_tags(5, &spans), vec![O, B, I, B, O]);
    }

    #[test]
    fn decoding_examples() {
        assert_eq!(decode_spans(&[B, I, O]), vec![(0, 2)]);
        assert_eq!(decode_spans(&[O, O, O]), vec![]);
        assert_eq!(decode_spans(&[I, I, O]), vec![(0, 2)]);
        assert_eq!(decode_spans(&[B, B, I]), vec![(0, 1), (1, 3)]);
        assert_eq!(decode_spans(&[O, I, O, B]), vec![(1, 2), (3, 4)]);
    }

    #[test]
    fn gold_tags_decode_back_to_spans() {
        let spans = [
            AspectSpan::new(0, 2, SentimentLabel::Positive),
            AspectSpan::new(2, 3, SentimentLabel::Positive),
            AspectSpan::new(5, 7, SentimentLabel::Neutral),
        ];
        let got = decode_spans(&gold_tags(8, &spans));
        assert_eq!(got, vec![(0, 2), (2, 3), (5, 7)]);
    }

    fn rows(tape: &mut Tape, r: &[&[f64]]) -> Var {
        tape.constant(Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap())
    }

    #[test]
    fn aspect_embedding_edge_cases() {
        let mut tape = Tape::new();
        let states = rows(&mut tape, &[&[1.0, 2.0], &[3.0, 4.0], &[3.0, 4.0]]);
        let pool = rows(&mut tape, &[&[0.5, -1.0]]);
        let (e_t, e_i) = aspect_embeddings(&mut tape, states, pool, (0, 1)).unwrap();
        assert_eq!(tape.value(e_t).data(), &[1.0, 2.0]);
        assert_eq!(tape.value(e_i).data(), &[0.5, -1.0]);
        let (e_t, _) = aspect_embeddings(&mut tape, states, pool, (1, 3)).unwrap();
        assert_eq!(tape.value(e_t).data(), &[3.0, 4.0]);
        assert!(aspect_embeddings(&mut tape, states, pool, (2, 2)).is_err());
        assert!(aspect_embeddings(&mut tape, states, pool, (2, 4)).is_err());
    }

    #[test]
    fn zero_gate_gives_midpoint() {
        let config = RunConfig { d: 2, heads: 1, ..RunConfig::default() };
        let params = init_params(&config, 0).unwrap();
        let mut tape = Tape::new();
        let a = rows(&mut tape, &[&[1.0, 0.0]]);
        let b = rows(&mut tape, &[&[0.0, 3.0]]);
        let (f, alpha) = balance_fuse(&mut tape, &params, a, b, true).unwrap();
        assert_eq!(tape.scalar(alpha), 0.5);
        assert_eq!(tape.value(f).data(), &[0.5, 1.5]);
        let (f, _) = balance_fuse(&mut tape, &params, a, a, true).unwrap();
        assert_eq!(tape.value(f).data(), &[1.0, 0.0]);
    }

    #[test]
    fn saturated_gate_selects_text() {
        let config = RunConfig { d: 2, heads: 1, ..RunConfig::default() };
        let mut params = init_params(&config, 0).unwrap();
        params.set(ParamId::GateBias, Tensor::scalar(60.0));
        let mut tape = Tape::new();
        let a = rows(&mut tape, &[&[1.0, 0.0]]);
        let b = rows(&mut tape, &[&[0.0, 3.0]]);
        let (f, alpha) = balance_fuse(&mut tape, &params, a, b, true).unwrap();
        assert!(tape.scalar(alpha) > 1.0 - 1e-12);
        assert!(tape.value(f).max_abs_diff(tape.value(a)) < 1e-12);
        // switched off: pinned at one half regardless of the gate
        let (_, alpha) = balance_fuse(&mut tape, &params, a, b, false).unwrap();
        assert_eq!(tape.scalar(alpha), 0.5);
    }

    #[test]
    fn zero_head_is_uniform() {
        let config = RunConfig { d: 4, heads: 1, ..RunConfig::default() };
        let mut params = init_params(&config, 0).unwrap();
        params.get_mut(ParamId::SentimentWeight).fill(0.0);
        let p = predict_sentiment(&params, &[0.3, -1.0, 2.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let params = init_params(&config, 1).unwrap();
        let p = predict_sentiment(&params, &[0.3, -1.0, 2.0, 0.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(predict_sentiment(&params, &[1.0]).is_err());
    }
}
