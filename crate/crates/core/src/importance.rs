//! Token importance: visual-to-text relevance, linguistic importance, their
//! combination, the per-sentence adaptive threshold and the resulting mask.
//!
//! Special rows (`cls`/`sep`) never take part: every vector here has one
//! entry per content token.

use serde::Serialize;

use crate::config::RunConfig;
use crate::encoder::{EncodedInstance, LingFeatures};
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::params::{ModelParams, ParamId};
use crate::types::MASK_TOKEN;

/// Values of the importance computation for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceProfile {
    pub r_vis: Vec<f64>,
    pub r_ling: Vec<f64>,
    pub combined: Vec<f64>,
    pub theta: f64,
    pub mask: Vec<bool>,
}

/// Relevance outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct Relevance {
    /// `1 x L` distribution over content tokens.
    pub r_vis: Var,
    /// `1 x M` distribution over memory rows (`V_I` rows, then caption rows
    /// when captions are used); the visual-side attention bias.
    pub s_v: Var,
}

/// Scaled dot products between projected text tokens and projected
/// visual/caption rows, mean-pooled per token and softmaxed over tokens.
///
/// The mirror-image pooling (per row, over tokens) gives the visual-side
/// bias `s_v`.
pub fn visual_relevance(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    enc: &EncodedInstance,
    use_captions: bool,
) -> Result<Relevance> {
    if enc.len == 0 {
        return Err(Error::Data("visual relevance of an empty sentence".into()));
    }
    let scale = 1.0 / (config.d as f64).sqrt();
    let tokens = tape.slice_rows(enc.text, 1, enc.len + 1);
    let pt = params.var(tape, ParamId::RelevanceText);
    let pv = params.var(tape, ParamId::RelevanceVisual);
    let tq = tape.matmul(tokens, pt);
    let vk = tape.matmul(enc.visual, pv);
    let gv = tape.matmul_nt(tq, vk);
    let gv = tape.scale(gv, scale);
    let mut per_token = tape.mean_cols(gv);
    let mut per_row = tape.mean_rows(gv);

    let caption_rows = tape.value(enc.caption).rows();
    if use_captions && caption_rows > 0 {
        let pc = params.var(tape, ParamId::RelevanceCaption);
        let ck = tape.matmul(enc.caption, pc);
        let gc = tape.matmul_nt(tq, ck);
        let gc = tape.scale(gc, scale);
        let cap_token = tape.mean_cols(gc);
        per_token = tape.add(per_token, cap_token);
        let cap_row = tape.mean_rows(gc);
        per_row = tape.concat_cols(&[per_row, cap_row]);
    }
    let logits = tape.transpose(per_token);
    let r_vis = tape.softmax_rows(logits);
    let s_v = tape.softmax_rows(per_row);
    Ok(Relevance { r_vis, s_v })
}

/// `sigmoid(W_d d_i + W_p p_i + W_n n_i + b)` as a `1 x L` row.
pub fn linguistic_importance(tape: &mut Tape, params: &ModelParams, ling: &LingFeatures) -> Var {
    let wd = params.var(tape, ParamId::LingDep);
    let wp = params.var(tape, ParamId::LingPos);
    let wn = params.var(tape, ParamId::LingNer);
    let b = params.var(tape, ParamId::LingBias);
    let sd = tape.matmul(ling.dep, wd);
    let sp = tape.matmul(ling.pos, wp);
    let sn = tape.matmul(ling.ner, wn);
    let sum = tape.add(sd, sp);
    let sum = tape.add(sum, sn);
    let sum = tape.add_row(sum, b);
    let col = tape.sigmoid(sum);
    tape.transpose(col)
}

/// `gamma * r_ling + (1 - gamma) * r_vis`.
pub fn combined_score(r_ling: &[f64], r_vis: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if r_ling.len() != r_vis.len() {
        return Err(Error::Data(format!(
            "score length mismatch: {} linguistic vs {} visual",
            r_ling.len(),
            r_vis.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma = {gamma} is outside [0, 1]")));
    }
    Ok(r_ling.iter().zip(r_vis).map(|(l, v)| gamma * l + (1.0 - gamma) * v).collect())
}

pub fn combined_score_var(tape: &mut Tape, r_ling: Var, r_vis: Var, gamma: f64) -> Var {
    let l = tape.scale(r_ling, gamma);
    let v = tape.scale(r_vis, 1.0 - gamma);
    tape.add(l, v)
}

pub fn mean_and_population_std(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `theta = mean(S) + alpha_m * std(S)`, population standard deviation.
pub fn adaptive_threshold(s: &[f64], alpha_m: f64) -> f64 {
    assert!(!s.is_empty(), "threshold of an empty sentence");
    let (mean, std) = mean_and_population_std(s);
    mean + alpha_m * std
}

/// Strict `S[i] > theta`.
pub fn mask_decisions(s: &[f64], theta: f64) -> Vec<bool> {
    s.iter().map(|&v| v > theta).collect()
}

/// Replaces every token whose score exceeds `theta` with [`MASK_TOKEN`];
/// identity when `enabled` is false.
pub fn apply_mask(tokens: &[u32], s: &[f64], theta: f64, enabled: bool) -> Vec<u32> {
    assert_eq!(tokens.len(), s.len(), "apply_mask lengths");
    if !enabled {
        return tokens.to_vec();
    }
    tokens.iter().zip(s).map(|(&t, &v)| if v > theta { MASK_TOKEN } else { t }).collect()
}

/// Differentiable threshold for the straight-through path: `1 x 1`.
pub(crate) fn threshold_var(tape: &mut Tape, s: Var, alpha_m: Var) -> Var {
    let len = tape.value(s).cols();
    let ones = tape.constant(Tensor::filled(1, len, 1.0));
    let mean = tape.mean_cols(s);
    let mean_row = tape.matmul(mean, ones);
    let centered = tape.sub(s, mean_row);
    let sq = tape.mul(centered, centered);
    let var = tape.mean_cols(sq);
    let std = tape.sqrt(var);
    let spread = tape.mul_scalar(std, alpha_m);
    tape.add(mean, spread)
}
