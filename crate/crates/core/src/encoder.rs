//! Trainable stand-ins for the text, image and caption encoders.
//!
//! Text rows are `[cls; tokens; sep]`, each token being the projection of
//! its concatenated word, POS and dependency embeddings plus a sinusoidal
//! position. Visual rows are `[cls; patches]` in the patch width. Captions
//! are embedded directly in the shared width. NER embeddings feed only the
//! linguistic importance score.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::params::{ModelParams, ParamId};
use crate::types::MultimodalInstance;

/// Per-token linguistic embeddings, each `L x width`.
#[derive(Debug, Clone, Copy)]
pub struct LingFeatures {
    pub dep: Var,
    pub pos: Var,
    pub ner: Var,
}

/// Tape handles for one encoded instance.
#[derive(Debug, Clone, Copy)]
pub struct EncodedInstance {
    /// `(L+2) x d`.
    pub text: Var,
    /// `(K+1) x d_v`.
    pub visual: Var,
    /// `L_c x d`; zero rows for an empty caption.
    pub caption: Var,
    pub ling: LingFeatures,
    pub len: usize,
}

/// Sinusoidal encodings for positions `offset..offset+len` in `dim` columns.
pub fn positional_encoding(len: usize, dim: usize, offset: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for r in 0..len {
        let pos = (offset + r) as f64;
        for c in 0..dim {
            let pair = (c / 2) as f64;
            let angle = pos / 10000f64.powf(2.0 * pair / dim as f64);
            t.set(r, c, if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

fn check_ids(field: &str, ids: &[u32], limit: usize) -> Result<Vec<usize>> {
    ids.iter()
        .enumerate()
        .map(|(i, &id)| {
            if (id as usize) < limit {
                Ok(id as usize)
            } else {
                Err(Error::Data(format!("id out of range: {field}[{i}] = {id}, limit {limit}")))
            }
        })
        .collect()
}

pub fn encode_instance(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
) -> Result<EncodedInstance> {
    let (text, ling) = encode_text(tape, params, config, inst)?;
    let visual = encode_visual(tape, params, config, inst)?;
    let caption = encode_caption(tape, params, config, inst)?;
    Ok(EncodedInstance { text, visual, caption, ling, len: inst.len() })
}

/// `T0` and the linguistic triples.
pub fn encode_text(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
) -> Result<(Var, LingFeatures)> {
    if inst.tokens.is_empty() {
        return Err(Error::Data(format!("instance {} has no tokens", inst.id)));
    }
    let len = inst.len();
    if inst.pos.len() != len || inst.dep.len() != len || inst.ner.len() != len {
        return Err(Error::Data(format!("instance {}: tag length mismatch", inst.id)));
    }
    let pos = check_ids("pos", &inst.pos, config.pos_vocab)?;
    let dep = check_ids("dep", &inst.dep, config.dep_vocab)?;
    let ner = check_ids("ner", &inst.ner, config.ner_vocab)?;
    let ling = LingFeatures {
        pos: tape.gather(ParamId::PosEmbedding.slot(), params.get(ParamId::PosEmbedding), &pos),
        dep: tape.gather(ParamId::DepEmbedding.slot(), params.get(ParamId::DepEmbedding), &dep),
        ner: tape.gather(ParamId::NerEmbedding.slot(), params.get(ParamId::NerEmbedding), &ner),
    };
    let text = encode_words(tape, params, config, &inst.tokens, &ling)?;
    Ok((text, ling))
}

/// Text rows for an explicit word-id sequence over fixed linguistic
/// features; masking re-encodes with substituted ids through this.
pub fn encode_words(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    words: &[u32],
    ling: &LingFeatures,
) -> Result<Var> {
    let ids = check_ids("tokens", words, config.word_vocab)?;
    let len = ids.len();
    let w = tape.gather(ParamId::WordEmbedding.slot(), params.get(ParamId::WordEmbedding), &ids);
    let composite = tape.concat_cols(&[w, ling.pos, ling.dep]);
    let proj = params.var(tape, ParamId::CompositeWeight);
    let bias = params.var(tape, ParamId::CompositeBias);
    let body = tape.matmul(composite, proj);
    let body = tape.add_row(body, bias);
    let cls = params.var(tape, ParamId::TextCls);
    let sep = params.var(tape, ParamId::TextSep);
    let rows = tape.concat_rows(&[cls, body, sep]);
    let pe = tape.constant(positional_encoding(len + 2, config.d, 0));
    Ok(tape.add(rows, pe))
}

/// `V_I`: projected patches with positions, `cls` row first.
pub fn encode_visual(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
) -> Result<Var> {
    let pe = positional_encoding(inst.patches.len() + 1, config.d_v, 0);
    encode_visual_with_positions(tape, params, config, &inst.patches, pe)
}

pub(crate) fn encode_visual_with_positions(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    patches: &[Vec<f64>],
    positions: Tensor,
) -> Result<Var> {
    if patches.is_empty() {
        return Err(Error::Data("instance has no patches".into()));
    }
    if let Some(bad) = patches.iter().position(|p| p.len() != config.d_v) {
        return Err(Error::Data(format!("patch {bad} has width {}, expected {}", patches[bad].len(), config.d_v)));
    }
    let raw = Tensor::from_rows(patches)?;
    let raw = tape.constant(raw);
    let w = params.var(tape, ParamId::PatchWeight);
    let b = params.var(tape, ParamId::PatchBias);
    let proj = tape.matmul(raw, w);
    let proj = tape.add_row(proj, b);
    let cls = params.var(tape, ParamId::VisualCls);
    let rows = tape.concat_rows(&[cls, proj]);
    let pe = tape.constant(positions);
    Ok(tape.add(rows, pe))
}

/// `C0`: caption embeddings with positions.
pub fn encode_caption(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
) -> Result<Var> {
    let ids = check_ids("caption_tokens", &inst.caption_tokens, config.word_vocab)?;
    let emb = tape.gather(ParamId::CaptionEmbedding.slot(), params.get(ParamId::CaptionEmbedding), &ids);
    let pe = tape.constant(positional_encoding(ids.len(), config.d, 0));
    Ok(tape.add(emb, pe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use crate::types::fixtures::instance;

    fn config() -> RunConfig {
        RunConfig {
            d: 8,
            d_t: 4,
            d_v: 4,
            d_p: 3,
            d_d: 3,
            d_n: 2,
            heads: 2,
            word_vocab: 20,
            pos_vocab: 5,
            dep_vocab: 5,
            ner_vocab: 3,
            ..RunConfig::default()
        }
    }

    fn single_token() -> MultimodalInstance {
        let mut i = instance();
        i.tokens.truncate(1);
        i.pos.truncate(1);
        i.dep.truncate(1);
        i.ner.truncate(1);
        i.patches.truncate(1);
        i
    }

    #[test]
    fn shapes_for_minimal_instance() {
        let c = config();
        let p = init_params(&c, 1).unwrap();
        let mut tape = Tape::new();
        let enc = encode_instance(&mut tape, &p, &c, &single_token()).unwrap();
        assert_eq!(tape.value(enc.text).shape(), (3, c.d));
        assert_eq!(tape.value(enc.visual).shape(), (2, c.d_v));
        assert_eq!(tape.value(enc.caption).shape(), (2, c.d));
        assert_eq!(tape.value(enc.ling.ner).shape(), (1, c.d_n));
    }

    #[test]
    fn identical_tokens_differ_by_positions_only() {
        let c = config();
        let p = init_params(&c, 2).unwrap();
        let mut inst = instance();
        inst.tokens = vec![5, 5, 5];
        inst.pos = vec![1, 1, 1];
        inst.dep = vec![2, 2, 2];
        let mut tape = Tape::new();
        let (t0, _) = encode_text(&mut tape, &p, &c, &inst).unwrap();
        let t0 = tape.value(t0);
        let pe = positional_encoding(5, c.d, 0);
        for col in 0..c.d {
            let got = t0.get(1, col) - t0.get(2, col);
            let want = pe.get(1, col) - pe.get(2, col);
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tables_leave_positional_rows() {
        let c = config();
        let mut p = init_params(&c, 3).unwrap();
        for id in
            [ParamId::WordEmbedding, ParamId::PosEmbedding, ParamId::DepEmbedding, ParamId::TextCls, ParamId::TextSep]
        {
            p.get_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let (t0, _) = encode_text(&mut tape, &p, &c, &instance()).unwrap();
        let expected = positional_encoding(5, c.d, 0);
        assert!(tape.value(t0).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn identity_patch_projection_recovers_patches() {
        let c = config();
        let mut p = init_params(&c, 4).unwrap();
        p.set(ParamId::PatchWeight, Tensor::identity(c.d_v));
        p.get_mut(ParamId::VisualCls).fill(0.0);
        let inst = instance();
        let mut tape = Tape::new();
        let zero_pe = Tensor::zeros(inst.patches.len() + 1, c.d_v);
        let v = encode_visual_with_positions(&mut tape, &p, &c, &inst.patches, zero_pe).unwrap();
        let v = tape.value(v);
        assert!(v.row(0).iter().all(|&x| x == 0.0));
        for (k, patch) in inst.patches.iter().enumerate() {
            assert_eq!(v.row(k + 1), patch.as_slice());
        }
    }

    #[test]
    fn patch_order_matters_with_positions() {
        let c = config();
        let p = init_params(&c, 5).unwrap();
        let inst = instance();
        let mut swapped = inst.clone();
        swapped.patches.reverse();
        let mut tape = Tape::new();
        let a = encode_visual(&mut tape, &p, &c, &inst).unwrap();
        let b = encode_visual(&mut tape, &p, &c, &swapped).unwrap();
        assert!(tape.value(a).max_abs_diff(tape.value(b)) > 1e-6);
    }

    #[test]
    fn caption_edge_cases() {
        let c = config();
        let p = init_params(&c, 6).unwrap();
        let mut inst = instance();
        inst.caption_tokens.clear();
        let mut tape = Tape::new();
        let empty = encode_caption(&mut tape, &p, &c, &inst).unwrap();
        assert_eq!(tape.value(empty).shape(), (0, c.d));
        inst.caption_tokens = vec![4];
        let one = encode_caption(&mut tape, &p, &c, &inst).unwrap();
        assert_eq!(tape.value(one).shape(), (1, c.d));
        let q = init_params(&c, 7).unwrap();
        let other = encode_caption(&mut tape, &q, &c, &inst).unwrap();
        assert!(tape.value(one).max_abs_diff(tape.value(other)) > 0.0);
    }

    #[test]
    fn out_of_range_ids_are_errors() {
        let c = config();
        let p = init_params(&c, 8).unwrap();
        let mut inst = instance();
        inst.tokens[0] = 99;
        let mut tape = Tape::new();
        assert!(matches!(encode_text(&mut tape, &p, &c, &inst), Err(Error::Data(_))));
        let mut inst = instance();
        inst.caption_tokens[0] = 20;
        assert!(encode_caption(&mut tape, &p, &c, &inst).is_err());
        let mut inst = instance();
        inst.patches[0].push(1.0);
        assert!(encode_visual(&mut tape, &p, &c, &inst).is_err());
    }
}
