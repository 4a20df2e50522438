//! Full forward pass for one instance.
//!
//! Order of computation:
//! 1. encode text, patches and caption;
//! 2. score tokens (visual relevance, linguistic importance, combined);
//! 3. mask the tokens above the adaptive threshold and re-encode them;
//! 4. run unified attention over the masked states (with a residual) and
//!    tag each content token;
//! 5. run unified attention over the unmasked states for the aspect-level
//!    representations used by sentiment classification and alignment.
//!
//! Hard decisions (the mask and the loss weights) are values, not graph
//! nodes. Passing [`Decisions`] pins them, which keeps the loss a smooth
//! function of the parameters for finite-difference checks.

use crate::alignment::{project_image_var, project_text_var, squared_distance_var};
use crate::attention::{modality_coefficients_var, unified_attention, UnifiedInputs};
use crate::augment::coherence;
use crate::config::RunConfig;
use crate::encoder::{encode_instance, encode_words};
use crate::error::Result;
use crate::extraction::{
    argmax_tags, aspect_embeddings, balance_fuse, decode_spans, sentiment_logits, tag_logits, AspectPrediction,
};
use crate::importance::{
    adaptive_threshold, combined_score_var, linguistic_importance, mask_decisions, threshold_var, visual_relevance,
    ImportanceProfile,
};
use crate::numeric::{softmax, NumericError, Tape, Tensor, Var};
use crate::params::{ModelParams, ParamId};
use crate::training::token_weights;
use crate::types::{MultimodalInstance, MASK_TOKEN};

/// Pinned per-instance decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub mask: Vec<bool>,
    pub weights: Vec<f64>,
}

/// Tape handles and values from [`forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub profile: ImportanceProfile,
    pub token_weights: Vec<f64>,
    /// `L x 3`.
    pub tag_logits: Var,
    /// `L x d` content rows of the unmasked pass.
    pub states: Var,
    /// Rows attended by the visual aspect embedding (patches, then caption).
    pub pool: Var,
    /// `1 x d` mean of the projected visual rows.
    pub image_summary: Var,
    pub alpha_t: Var,
    pub alpha_v: Var,
}

impl Forward {
    pub fn decisions(&self) -> Decisions {
        Decisions { mask: self.profile.mask.clone(), weights: self.token_weights.clone() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AspectForward {
    pub e_t_prime: Var,
    pub e_i_prime: Var,
    pub alpha: Var,
    /// `1 x 3`.
    pub logits: Var,
    pub distance: Var,
}

pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
    pinned: Option<&Decisions>,
) -> Result<Forward> {
    let enc = encode_instance(tape, params, config, inst)?;
    let len = enc.len;
    let use_captions = !config.no_captions;
    let rel = visual_relevance(tape, params, config, &enc, use_captions)?;
    let r_ling = linguistic_importance(tape, params, &enc.ling);
    let s = combined_score_var(tape, r_ling, rel.r_vis, config.gamma);

    let s_vals = tape.value(s).data().to_vec();
    let theta = adaptive_threshold(&s_vals, params.get(ParamId::MaskScale).item());
    let (mask, weights) = match pinned {
        Some(d) => {
            if d.mask.len() != len || d.weights.len() != len {
                return Err(NumericError::Shape(format!(
                    "pinned decisions cover {} tokens, instance has {len}",
                    d.mask.len()
                ))
                .into());
            }
            (d.mask.clone(), d.weights.clone())
        }
        None if config.no_masking => (vec![false; len], token_weights(&s_vals)?),
        None => (mask_decisions(&s_vals, theta), token_weights(&s_vals)?),
    };

    let straight_through = config.straight_through_mask && !config.no_masking && pinned.is_none();
    let masked_text = if straight_through {
        straight_through_text(tape, params, config, inst, &enc, s, &mask)?
    } else if mask.iter().any(|&m| m) {
        let ids: Vec<u32> = inst.tokens.iter().zip(&mask).map(|(&t, &m)| if m { MASK_TOKEN } else { t }).collect();
        encode_words(tape, params, config, &ids, &enc.ling)?
    } else {
        enc.text
    };

    let wm = params.var(tape, ParamId::MemoryProjection);
    let visual = tape.matmul(enc.visual, wm);
    let image_summary = tape.mean_rows(visual);
    let memory = if use_captions && tape.value(enc.caption).rows() > 0 {
        tape.concat_rows(&[visual, enc.caption])
    } else {
        visual
    };
    let rows = tape.value(memory).rows();
    let pool = tape.slice_rows(memory, 1, rows);

    let zero = tape.constant(Tensor::zeros(1, 1));
    let text_bias = tape.concat_cols(&[zero, s, zero]);
    let (alpha_t, alpha_v) = modality_coefficients_var(tape, r_ling, rel.r_vis);

    let mut inputs = UnifiedInputs { queries: masked_text, text_bias, memory, memory_bias: rel.s_v, alpha_t, alpha_v };
    let tagged = residual_pass(tape, params, config, &inputs, len)?;
    let logits = tag_logits(tape, params, tagged);
    let states = if masked_text == enc.text {
        tagged
    } else {
        inputs.queries = enc.text;
        residual_pass(tape, params, config, &inputs, len)?
    };

    let profile = ImportanceProfile {
        r_vis: tape.value(rel.r_vis).data().to_vec(),
        r_ling: tape.value(r_ling).data().to_vec(),
        combined: s_vals,
        theta,
        mask,
    };
    Ok(Forward { profile, token_weights: weights, tag_logits: logits, states, pool, image_summary, alpha_t, alpha_v })
}

/// Content rows of `queries + unified(queries)`.
fn residual_pass(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inputs: &UnifiedInputs,
    len: usize,
) -> Result<Var> {
    let out = unified_attention(tape, params, config, inputs)?;
    let h = tape.add(inputs.queries, out.fused);
    Ok(tape.slice_rows(h, 1, len + 1))
}

/// Masked text whose value equals the hard-masked encoding but whose
/// gradient flows through `sigmoid((S - theta) / temperature)` into the
/// scores and the threshold scale.
fn straight_through_text(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
    enc: &crate::encoder::EncodedInstance,
    s: Var,
    mask: &[bool],
) -> Result<Var> {
    let len = enc.len;
    let alpha_m = params.var(tape, ParamId::MaskScale);
    let theta = threshold_var(tape, s, alpha_m);
    let ones = tape.constant(Tensor::filled(1, len, 1.0));
    let theta_row = tape.matmul(theta, ones);
    let gap = tape.sub(s, theta_row);
    let gap = tape.scale(gap, 1.0 / config.straight_through_temperature);
    let soft = tape.sigmoid(gap);
    let hard = Tensor::row_vector(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect());
    let mut correction = hard;
    correction.add_assign_scaled(tape.value(soft), -1.0);
    let correction = tape.constant(correction);
    let h = tape.add(soft, correction);
    let zero = tape.constant(Tensor::zeros(1, 1));
    let h = tape.concat_cols(&[zero, h, zero]);
    let h = tape.transpose(h);
    let wide = tape.constant(Tensor::filled(1, config.d, 1.0));
    let h = tape.matmul(h, wide);
    let all_masked = encode_words(tape, params, config, &vec![MASK_TOKEN; inst.len()], &enc.ling)?;
    let delta = tape.sub(all_masked, enc.text);
    let moved = tape.mul(h, delta);
    Ok(tape.add(enc.text, moved))
}

/// Aspect-level nodes for the span `[start, end)`.
pub fn aspect_forward(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    fwd: &Forward,
    span: (usize, usize),
) -> Result<AspectForward> {
    let (e_t, e_i) = aspect_embeddings(tape, fwd.states, fwd.pool, span)?;
    let e_t_prime = project_text_var(tape, params, e_t);
    let e_i_prime = project_image_var(tape, params, e_i);
    let (fused, alpha) = balance_fuse(tape, params, e_t_prime, e_i_prime, !config.no_balancing)?;
    let logits = sentiment_logits(tape, params, fused);
    let distance = squared_distance_var(tape, e_t_prime, e_i_prime);
    Ok(AspectForward { e_t_prime, e_i_prime, alpha, logits, distance })
}

/// Model output for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub aspects: Vec<AspectPrediction>,
    pub profile: ImportanceProfile,
    pub alpha_t: f64,
    pub alpha_v: f64,
}

/// Predicts aspects of `inst`. Spans come from the tagger unless `spans`
/// is given.
pub fn predict(
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
    spans: Option<&[(usize, usize)]>,
) -> Result<InstancePrediction> {
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, params, config, inst, None)?;
    let spans = match spans {
        Some(s) => s.to_vec(),
        None => decode_spans(&argmax_tags(tape.value(fwd.tag_logits))),
    };
    let mut aspects = Vec::with_capacity(spans.len());
    for &(start, end) in &spans {
        let a = aspect_forward(&mut tape, params, config, &fwd, (start, end))?;
        let p = softmax(tape.value(a.logits).data());
        aspects.push(AspectPrediction::new(start, end, tape.scalar(a.alpha), [p[0], p[1], p[2]]));
    }
    tape.check()?;
    Ok(InstancePrediction {
        aspects,
        alpha_t: tape.scalar(fwd.alpha_t),
        alpha_v: tape.scalar(fwd.alpha_v),
        profile: fwd.profile,
    })
}

/// Mean over the gold aspects (the whole sentence when there are none) of
/// the cosine between the aligned text embedding and the aligned mean
/// image embedding.
pub fn coherence_score(params: &ModelParams, config: &RunConfig, inst: &MultimodalInstance) -> Result<f64> {
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, params, config, inst, None)?;
    let image = project_image_var(&mut tape, params, fwd.image_summary);
    let image = tape.value(image).data().to_vec();
    let spans: Vec<(usize, usize)> =
        if inst.aspects.is_empty() { vec![(0, inst.len())] } else { inst.aspects.iter().map(|a| a.bounds()).collect() };
    let mut total = 0.0;
    for &span in &spans {
        let (e_t, _) = aspect_embeddings(&mut tape, fwd.states, fwd.pool, span)?;
        let e_t = project_text_var(&mut tape, params, e_t);
        total += coherence(tape.value(e_t).data(), &image)?;
    }
    Ok(total / spans.len() as f64)
}
