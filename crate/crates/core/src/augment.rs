//! Text augmentation stub and coherence filtering.
//!
//! `perturb_text` swaps non-aspect tokens for random words of the same
//! part of speech. Candidates are scored by cosine similarity between
//! their aligned text embedding and the image embedding and dropped
//! below a threshold.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::MultimodalInstance;

/// Substitution pools: POS id to the word ids that may replace a token
/// with that tag. Tags without a pool are never substituted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub pools: BTreeMap<u32, Vec<u32>>,
}

impl Lexicon {
    pub fn new(pools: BTreeMap<u32, Vec<u32>>) -> Self {
        Self { pools }
    }

    /// Pools collected from the non-aspect tokens of `data`, skipping the
    /// tags in `exclude`. Words are sorted and deduplicated.
    pub fn from_instances(data: &[MultimodalInstance], exclude: &[u32]) -> Self {
        let mut pools: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for inst in data {
            let inside = aspect_mask(inst);
            for ((&word, &pos), &masked) in inst.tokens.iter().zip(&inst.pos).zip(&inside) {
                if masked || exclude.contains(&pos) {
                    continue;
                }
                pools.entry(pos).or_default().push(word);
            }
        }
        for words in pools.values_mut() {
            words.sort_unstable();
            words.dedup();
        }
        Self { pools }
    }

    pub fn pool(&self, pos: u32) -> &[u32] {
        self.pools.get(&pos).map_or(&[], Vec::as_slice)
    }
}

fn aspect_mask(inst: &MultimodalInstance) -> Vec<bool> {
    let mut inside = vec![false; inst.len()];
    for a in &inst.aspects {
        for flag in inside.iter_mut().take(a.end.min(inst.len())).skip(a.start) {
            *flag = true;
        }
    }
    inside
}

/// Per-candidate seed from a base seed and an instance id (FNV-1a over the
/// id, mixed with the base).
pub fn candidate_seed(base: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Replaces each non-aspect token with probability `rate` by a draw from
/// its POS pool. Tags, patches, caption and aspects are untouched. The
/// random stream advances identically whatever the pools contain.
pub fn perturb_text(inst: &MultimodalInstance, lexicon: &Lexicon, seed: u64, rate: f64) -> MultimodalInstance {
    assert!((0.0..=1.0).contains(&rate), "perturbation rate {rate} outside [0, 1]");
    let mut out = inst.clone();
    let inside = aspect_mask(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ((token, &pos), &masked) in out.tokens.iter_mut().zip(&inst.pos).zip(&inside) {
        let coin: f64 = rng.random();
        let pick: u64 = rng.random();
        if masked || coin >= rate {
            continue;
        }
        let pool = lexicon.pool(pos);
        if !pool.is_empty() {
            *token = pool[(pick % pool.len() as u64) as usize];
        }
    }
    out
}

/// Cosine similarity, clamped into `[-1, 1]`.
pub fn coherence(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("coherence of widths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Data("coherence of a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCandidate {
    pub instance: MultimodalInstance,
    pub coherence: f64,
    pub kept: bool,
}

impl AugmentedCandidate {
    pub fn new(instance: MultimodalInstance, coherence: f64, tau: f64) -> Self {
        Self { instance, coherence, kept: coherence >= tau }
    }
}

/// Instances of the candidates whose coherence reaches `tau`; nothing when
/// augmentation is disabled.
pub fn filter_augmented(candidates: &[AugmentedCandidate], tau: f64, enabled: bool) -> Vec<MultimodalInstance> {
    if !enabled {
        return Vec::new();
    }
    candidates.iter().filter(|c| c.coherence >= tau).map(|c| c.instance.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::instance;
    use crate::types::{AspectSpan, SentimentLabel};

    fn longer() -> MultimodalInstance {
        let mut inst = instance();
        inst.tokens = vec![5, 6, 7, 8, 9, 10];
        inst.pos = vec![1, 2, 2, 3, 2, 4];
        inst.dep = vec![0; 6];
        inst.ner = vec![0; 6];
        inst.aspects = vec![AspectSpan::new(1, 3, SentimentLabel::Neutral)];
        inst
    }

    fn lexicon() -> Lexicon {
        Lexicon::new(BTreeMap::from([(1, vec![11]), (2, vec![12]), (3, vec![13])]))
    }

    #[test]
    fn zero_rate_is_identity() {
        let inst = longer();
        assert_eq!(perturb_text(&inst, &lexicon(), 3, 0.0), inst);
    }

    #[test]
    fn full_rate_with_singleton_pools() {
        let inst = longer();
        let a = perturb_text(&inst, &lexicon(), 3, 1.0);
        let b = perturb_text(&inst, &lexicon(), 99, 1.0);
        assert_eq!(a, b);
        // aspect tokens 1..3 kept; tag 4 has no pool
        assert_eq!(a.tokens, vec![11, 6, 7, 13, 12, 10]);
        assert_eq!(a.pos, inst.pos);
        assert_eq!(a.patches, inst.patches);
        assert_eq!(a.aspects, inst.aspects);
    }

    #[test]
    fn perturbation_is_seeded() {
        let inst = longer();
        let lex = Lexicon::new(BTreeMap::from([(2, (20..60).collect()), (1, (60..90).collect())]));
        let a = perturb_text(&inst, &lex, 5, 0.7);
        assert_eq!(a, perturb_text(&inst, &lex, 5, 0.7));
        assert_eq!(&a.tokens[1..3], &inst.tokens[1..3]);
    }

    #[test]
    fn lexicon_from_data_skips_aspects_and_excluded_tags() {
        let inst = longer();
        let lex = Lexicon::from_instances(&[inst.clone(), inst], &[3]);
        assert_eq!(lex.pool(1), &[5]);
        assert_eq!(lex.pool(2), &[9]);
        assert!(lex.pool(3).is_empty());
        assert_eq!(lex.pool(4), &[10]);
    }

    #[test]
    fn coherence_examples() {
        assert!((coherence(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(coherence(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(coherence(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(coherence(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(coherence(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn filtering_thresholds() {
        let cands: Vec<_> = [0.9, 0.5, 0.49, -0.2, 1.0]
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut inst = instance();
                inst.id = format!("c{k}");
                AugmentedCandidate::new(inst, c, 0.5)
            })
            .collect();
        let ids = |v: Vec<MultimodalInstance>| v.into_iter().map(|i| i.id).collect::<Vec<_>>();
        assert_eq!(ids(filter_augmented(&cands, -1.0, true)).len(), 5);
        assert_eq!(ids(filter_augmented(&cands, 1.0, true)), vec!["c4"]);
        assert_eq!(ids(filter_augmented(&cands, 0.5, true)), vec!["c0", "c1", "c4"]);
        assert!(filter_augmented(&cands, -1.0, false).is_empty());
        assert_eq!(cands.iter().filter(|c| c.kept).count(), 3);
    }
}
