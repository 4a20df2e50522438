//! Importance-biased multi-head attention and the modality-weighted
//! combination of a text branch and a visual branch.
//!
//! The bias is key-side: a row vector `s` of length `L_k` is scaled by a
//! trainable `beta` and added to every query row's logits, so
//! `softmax(Q K^T / sqrt(d_h) + beta * 1 s^T) V`.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numeric::{NumericError, Tape, Var};
use crate::params::{ModelParams, ParamId};

/// Projection matrices of one attention branch.
#[derive(Debug, Clone, Copy)]
pub struct Branch {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
}

impl Branch {
    pub const TEXT: Branch = Branch {
        query: ParamId::TextQuery,
        key: ParamId::TextKey,
        value: ParamId::TextValue,
        output: ParamId::TextOutput,
    };
    pub const VISUAL: Branch = Branch {
        query: ParamId::VisualQuery,
        key: ParamId::VisualKey,
        value: ParamId::VisualValue,
        output: ParamId::VisualOutput,
    };
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `L_q x d`.
    pub fused: Var,
    /// One `L_q x L_k` weight matrix per head.
    pub text_weights: Vec<Var>,
    /// One `L_q x M` weight matrix per head.
    pub visual_weights: Vec<Var>,
    /// `1 x 1`.
    pub alpha_t: Var,
    /// `1 x 1`, exactly `1 - alpha_t`.
    pub alpha_v: Var,
}

/// Single-head attention with an optional key-side bias scaled by the
/// `1 x 1` node `beta`. Returns `(output, weights)`.
pub fn biased_attention(tape: &mut Tape, q: Var, k: Var, v: Var, bias: Option<Var>, beta: Var) -> Result<(Var, Var)> {
    let (lq, dq) = tape.value(q).shape();
    let (lk, dk) = tape.value(k).shape();
    let (lv, _) = tape.value(v).shape();
    if dq != dk || lk != lv || lq == 0 || lk == 0 {
        return Err(NumericError::Shape(format!("attention over Q {lq}x{dq}, K {lk}x{dk}, V with {lv} rows")).into());
    }
    let logits = tape.matmul_nt(q, k);
    let mut logits = tape.scale(logits, 1.0 / (dq as f64).sqrt());
    if let Some(s) = bias {
        let (br, bc) = tape.value(s).shape();
        if br != 1 || bc != lk {
            return Err(NumericError::Shape(format!("bias is {br}x{bc}, expected 1x{lk}")).into());
        }
        let shift = tape.mul_scalar(s, beta);
        logits = tape.add_row(logits, shift);
    }
    let weights = tape.softmax_rows(logits);
    let out = tape.matmul(weights, v);
    Ok((out, weights))
}

/// Multi-head attention: heads are contiguous column blocks of the
/// projected queries, keys and values; the concatenated head outputs go
/// through the branch output projection.
pub fn multi_head(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    branch: Branch,
    queries: Var,
    keys: Var,
    bias: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let wq = params.var(tape, branch.query);
    let wk = params.var(tape, branch.key);
    let wv = params.var(tape, branch.value);
    let wo = params.var(tape, branch.output);
    let beta = params.var(tape, ParamId::AttentionBiasScale);
    let q = tape.matmul(queries, wq);
    let k = tape.matmul(keys, wk);
    let v = tape.matmul(keys, wv);
    let dh = config.head_dim();
    let mut outs = Vec::with_capacity(config.heads);
    let mut weights = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let (o, w) = biased_attention(tape, qh, kh, vh, bias, beta)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
    Ok((tape.matmul(cat, wo), weights))
}

/// `alpha_t = sum(r_ling) / (sum(r_ling) + sum(r_vis))`, `alpha_v = 1 - alpha_t`.
pub fn modality_coefficients(r_ling: &[f64], r_vis: &[f64]) -> (f64, f64) {
    assert!(!r_ling.is_empty() && !r_vis.is_empty(), "modality coefficients of empty scores");
    let l: f64 = r_ling.iter().sum();
    let v: f64 = r_vis.iter().sum();
    let alpha_t = l / (l + v);
    (alpha_t, 1.0 - alpha_t)
}

/// Tape version of [`modality_coefficients`] for `1 x L` rows.
pub fn modality_coefficients_var(tape: &mut Tape, r_ling: Var, r_vis: Var) -> (Var, Var) {
    let l = tape.sum_all(r_ling);
    let v = tape.sum_all(r_vis);
    let denom = tape.add(l, v);
    let alpha_t = tape.div(l, denom);
    let alpha_v = tape.one_minus(alpha_t);
    (alpha_t, alpha_v)
}

/// Inputs to [`unified_attention`]. Both branches query with `queries`.
#[derive(Debug, Clone, Copy)]
pub struct UnifiedInputs {
    /// `L_q x d` query states; also the text branch keys and values.
    pub queries: Var,
    /// `1 x L_q` text-side bias.
    pub text_bias: Var,
    /// `M x d` visual memory (patch rows, then caption rows).
    pub memory: Var,
    /// `1 x M` visual-side bias.
    pub memory_bias: Var,
    pub alpha_t: Var,
    pub alpha_v: Var,
}

/// `alpha_t * TextAttention + alpha_v * VisualAttention`.
pub fn unified_attention(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inputs: &UnifiedInputs,
) -> Result<AttentionOutput> {
    let (text_out, text_weights) =
        multi_head(tape, params, config, Branch::TEXT, inputs.queries, inputs.queries, Some(inputs.text_bias))?;
    let (vis_out, visual_weights) =
        multi_head(tape, params, config, Branch::VISUAL, inputs.queries, inputs.memory, Some(inputs.memory_bias))?;
    if tape.value(text_out).shape() != tape.value(vis_out).shape() {
        return Err(Error::Numeric(NumericError::Shape(format!(
            "branch outputs {:?} and {:?}",
            tape.value(text_out).shape(),
            tape.value(vis_out).shape()
        ))));
    }
    let t = tape.mul_scalar(text_out, inputs.alpha_t);
    let v = tape.mul_scalar(vis_out, inputs.alpha_v);
    let fused = tape.add(t, v);
    Ok(AttentionOutput { fused, text_weights, visual_weights, alpha_t: inputs.alpha_t, alpha_v: inputs.alpha_v })
}
