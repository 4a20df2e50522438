//! Synthetic instances with a planted, modality-controllable sentiment
//! signal.
//!
//! Every aspect is a proper-noun span of one or two tokens. With
//! probability `rho` its sentiment lives in the image: every patch of the
//! instance is shifted by 1.0 along the axis of that sentiment (axes 0, 1,
//! 2 for positive, negative, neutral) and the text around the span stays
//! neutral. Otherwise an adjective from the sentiment's cue pool follows
//! the span. All visual aspects of one instance share the image
//! sentiment. Patch features always carry unit Gaussian noise.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::Lexicon;
use crate::error::{Error, Result};
use crate::types::{AspectSpan, MultimodalInstance, SentimentLabel, VocabSizes, MASK_TOKEN};

/// Part-of-speech ids.
pub mod pos {
    pub const PROPN: u32 = 0;
    pub const ADJ: u32 = 1;
    pub const NOUN: u32 = 2;
    pub const VERB: u32 = 3;
    pub const DET: u32 = 4;
    pub const ADP: u32 = 5;
    pub const ADV: u32 = 6;
    pub const PUNCT: u32 = 7;
    pub const COUNT: usize = 8;
}

/// Dependency-relation ids.
pub mod dep {
    pub const NSUBJ: u32 = 0;
    pub const FLAT: u32 = 1;
    pub const AMOD: u32 = 2;
    pub const ROOT: u32 = 3;
    pub const DET: u32 = 4;
    pub const OBJ: u32 = 5;
    pub const CASE: u32 = 6;
    pub const ADVMOD: u32 = 7;
    pub const PUNCT: u32 = 8;
    pub const COUNT: usize = 9;
}

/// Entity tag ids.
pub mod ner {
    pub const O: u32 = 0;
    pub const B_ENT: u32 = 1;
    pub const I_ENT: u32 = 2;
    pub const COUNT: usize = 3;
}

/// Filler parts of speech with their dependency relation and pool size.
const FILLERS: [(u32, u32, usize); 6] = [
    (pos::NOUN, dep::OBJ, 60),
    (pos::VERB, dep::ROOT, 40),
    (pos::DET, dep::DET, 6),
    (pos::ADP, dep::CASE, 10),
    (pos::ADV, dep::ADVMOD, 20),
    (pos::PUNCT, dep::PUNCT, 4),
];
const ASPECT_HEADS: usize = 60;
const ASPECT_TAILS: usize = 20;
const CUES_PER_SENTIMENT: usize = 10;
const SCENE_WORDS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_instances: usize,
    pub word_vocab: usize,
    pub pos_vocab: usize,
    pub dep_vocab: usize,
    pub ner_vocab: usize,
    pub patch_dim: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    /// Probability that an aspect's sentiment is carried by the image.
    pub rho: f64,
    /// Relative frequency of 1, 2 and 3 aspects per instance.
    pub aspect_weights: [f64; 3],
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_instances: 1000,
            word_vocab: 320,
            pos_vocab: pos::COUNT,
            dep_vocab: dep::COUNT,
            ner_vocab: ner::COUNT,
            patch_dim: 16,
            len_min: 6,
            len_max: 14,
            patches_min: 4,
            patches_max: 8,
            rho: 0.5,
            aspect_weights: [0.5, 0.3, 0.2],
            train_fraction: 0.7,
            dev_fraction: 0.15,
            seed: 0,
        }
    }
}

/// Word-id layout of the generator's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPools {
    pub aspect_heads: Vec<u32>,
    pub aspect_tails: Vec<u32>,
    /// Cue adjectives, indexed by sentiment.
    pub cues: [Vec<u32>; 3],
    /// Filler words by POS id.
    pub fillers: BTreeMap<u32, Vec<u32>>,
    pub scene: Vec<u32>,
}

impl WordPools {
    /// Words needed, including the mask id.
    pub fn required_words() -> usize {
        1 + ASPECT_HEADS
            + ASPECT_TAILS
            + 3 * CUES_PER_SENTIMENT
            + FILLERS.iter().map(|f| f.2).sum::<usize>()
            + SCENE_WORDS
    }

    fn layout() -> Self {
        let mut next = MASK_TOKEN + 1;
        let mut take = |n: usize| -> Vec<u32> {
            let v: Vec<u32> = (next..next + n as u32).collect();
            next += n as u32;
            v
        };
        let aspect_heads = take(ASPECT_HEADS);
        let aspect_tails = take(ASPECT_TAILS);
        let cues = [take(CUES_PER_SENTIMENT), take(CUES_PER_SENTIMENT), take(CUES_PER_SENTIMENT)];
        let fillers = FILLERS.iter().map(|&(p, _, n)| (p, take(n))).collect();
        let scene = take(SCENE_WORDS);
        Self { aspect_heads, aspect_tails, cues, fillers, scene }
    }

    /// Substitution pools for the augmentation stub: fillers only, so
    /// aspect words and sentiment cues are never introduced or removed.
    pub fn lexicon(&self) -> Lexicon {
        Lexicon::new(self.fillers.clone())
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho = {} is outside [0, 1]", self.rho)));
        }
        if self.len_min == 0 || self.len_min > self.len_max || self.len_max < 3 {
            return Err(Error::Config(format!(
                "length range [{}, {}] must be nonempty, start at 1 or more and reach at least 3",
                self.len_min, self.len_max
            )));
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return Err(Error::Config(format!(
                "patch range [{}, {}] must be nonempty and start at 1 or more",
                self.patches_min, self.patches_max
            )));
        }
        if self.patch_dim < 3 {
            return Err(Error::Config("patch_dim must be at least 3 (one axis per sentiment)".into()));
        }
        if self.aspect_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.aspect_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("aspect_weights must be nonnegative with a positive sum".into()));
        }
        let fr = [self.train_fraction, self.dev_fraction, 1.0 - self.train_fraction - self.dev_fraction];
        if fr.iter().any(|f| !(-1e-12..=1.0).contains(f)) {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to at most 1".into()));
        }
        let need = WordPools::required_words();
        if self.word_vocab < need {
            return Err(Error::Config(format!(
                "vocab too small for same-POS pools: word_vocab = {}, need {need}",
                self.word_vocab
            )));
        }
        if self.pos_vocab < pos::COUNT || self.dep_vocab < dep::COUNT || self.ner_vocab < ner::COUNT {
            return Err(Error::Config(format!(
                "vocab too small: need at least {} POS, {} dependency and {} entity tags",
                pos::COUNT,
                dep::COUNT,
                ner::COUNT
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> VocabSizes {
        VocabSizes {
            words: self.word_vocab,
            pos: self.pos_vocab,
            dep: self.dep_vocab,
            ner: self.ner_vocab,
            patch_dim: self.patch_dim,
        }
    }
}

/// Generated splits with their vocabulary and augmentation pools.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Vec<MultimodalInstance>,
    pub dev: Vec<MultimodalInstance>,
    pub test: Vec<MultimodalInstance>,
    pub vocab: VocabSizes,
    pub lexicon: Lexicon,
}

struct Token {
    word: u32,
    pos: u32,
    dep: u32,
    ner: u32,
}

fn pick(rng: &mut ChaCha8Rng, pool: &[u32]) -> u32 {
    pool[rng.random_range(0..pool.len())]
}

fn filler(rng: &mut ChaCha8Rng, pools: &WordPools) -> Token {
    let (p, d, _) = FILLERS[rng.random_range(0..FILLERS.len())];
    Token { word: pick(rng, &pools.fillers[&p]), pos: p, dep: d, ner: ner::O }
}

struct PlannedAspect {
    span_len: usize,
    sentiment: SentimentLabel,
    visual: bool,
}

impl PlannedAspect {
    fn width(&self) -> usize {
        self.span_len + usize::from(!self.visual)
    }
}

fn instance(spec: &SyntheticSpec, pools: &WordPools, rng: &mut ChaCha8Rng, id: String) -> MultimodalInstance {
    let count_dist = WeightedIndex::new(spec.aspect_weights).expect("validated weights");
    let n_aspects = count_dist.sample(rng) + 1;
    let image_sentiment = SentimentLabel::ALL[rng.random_range(0..3)];
    let mut plan: Vec<PlannedAspect> = (0..n_aspects)
        .map(|_| {
            let visual = rng.random_bool(spec.rho);
            let sentiment = if visual { image_sentiment } else { SentimentLabel::ALL[rng.random_range(0..3)] };
            PlannedAspect { span_len: rng.random_range(1..=2), sentiment, visual }
        })
        .collect();
    let mut len = rng.random_range(spec.len_min..=spec.len_max);
    let needed =
        |plan: &[PlannedAspect]| plan.iter().map(PlannedAspect::width).sum::<usize>() + plan.len().saturating_sub(1);
    while needed(&plan) > spec.len_max {
        if plan.len() > 1 {
            plan.pop();
        } else {
            plan[0].span_len = 1;
        }
    }
    len = len.max(needed(&plan));

    // free filler slots spread over the gaps around the aspect segments
    let mut gaps = vec![0usize; plan.len() + 1];
    for g in gaps.iter_mut().take(plan.len()).skip(1) {
        *g = 1;
    }
    for _ in 0..len - needed(&plan) {
        let k = rng.random_range(0..gaps.len());
        gaps[k] += 1;
    }

    let mut tokens: Vec<Token> = Vec::with_capacity(len);
    let mut aspects = Vec::with_capacity(plan.len());
    for (k, a) in plan.iter().enumerate() {
        for _ in 0..gaps[k] {
            tokens.push(filler(rng, pools));
        }
        let start = tokens.len();
        tokens.push(Token { word: pick(rng, &pools.aspect_heads), pos: pos::PROPN, dep: dep::NSUBJ, ner: ner::B_ENT });
        for _ in 1..a.span_len {
            tokens.push(Token {
                word: pick(rng, &pools.aspect_tails),
                pos: pos::PROPN,
                dep: dep::FLAT,
                ner: ner::I_ENT,
            });
        }
        aspects.push(AspectSpan::new(start, start + a.span_len, a.sentiment));
        if !a.visual {
            let cue = pick(rng, &pools.cues[a.sentiment.index()]);
            tokens.push(Token { word: cue, pos: pos::ADJ, dep: dep::AMOD, ner: ner::O });
        }
    }
    for _ in 0..gaps[plan.len()] {
        tokens.push(filler(rng, pools));
    }

    let n_patches = rng.random_range(spec.patches_min..=spec.patches_max);
    let shift_axis = plan.iter().any(|a| a.visual).then(|| image_sentiment.index());
    let patches = (0..n_patches)
        .map(|_| {
            (0..spec.patch_dim)
                .map(|c| {
                    let noise: f64 = StandardNormal.sample(rng);
                    noise + if shift_axis == Some(c) { 1.0 } else { 0.0 }
                })
                .collect()
        })
        .collect();

    let mut caption_tokens: Vec<u32> = aspects.iter().map(|a| tokens[a.start].word).collect();
    for _ in 0..rng.random_range(1..=2) {
        caption_tokens.push(pick(rng, &pools.scene));
    }

    MultimodalInstance {
        id,
        tokens: tokens.iter().map(|t| t.word).collect(),
        pos: tokens.iter().map(|t| t.pos).collect(),
        dep: tokens.iter().map(|t| t.dep).collect(),
        ner: tokens.iter().map(|t| t.ner).collect(),
        patches,
        caption_tokens,
        aspects,
    }
}

/// Deterministic in `spec`; the splits are consecutive slices of one
/// generated sequence.
pub fn generate(spec: &SyntheticSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let pools = WordPools::layout();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all: Vec<MultimodalInstance> =
        (0..spec.n_instances).map(|k| instance(spec, &pools, &mut rng, format!("syn-{}-{k:06}", spec.seed))).collect();
    let n_train = (spec.train_fraction * spec.n_instances as f64).round() as usize;
    let n_dev = ((spec.dev_fraction * spec.n_instances as f64).round() as usize).min(spec.n_instances - n_train);
    let mut rest = all;
    let test = rest.split_off(n_train + n_dev);
    let dev = rest.split_off(n_train);
    Ok(GeneratedData { train: rest, dev, test, vocab: spec.vocab(), lexicon: pools.lexicon() })
}

/// The generator's word pools (independent of the spec's seed).
pub fn word_pools() -> WordPools {
    WordPools::layout()
}
