//! Trainable tensors and their initialization.
//!
//! Matrices follow the row-vector convention: a projection from width `a`
//! to width `b` is stored as `a x b` and applied as `x * W`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::numeric::{Tape, Tensor, Var};

/// Every trainable tensor of the model. The discriminant is the slot index
/// used on the differentiation tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    WordEmbedding,
    PosEmbedding,
    DepEmbedding,
    NerEmbedding,
    CaptionEmbedding,
    TextCls,
    TextSep,
    CompositeWeight,
    CompositeBias,
    PatchWeight,
    PatchBias,
    VisualCls,
    MemoryProjection,
    RelevanceText,
    RelevanceVisual,
    RelevanceCaption,
    LingDep,
    LingPos,
    LingNer,
    LingBias,
    MaskScale,
    AttentionBiasScale,
    TextQuery,
    TextKey,
    TextValue,
    TextOutput,
    VisualQuery,
    VisualKey,
    VisualValue,
    VisualOutput,
    TagWeight,
    TagBias,
    AlignTextWeight,
    AlignTextBias,
    AlignImageWeight,
    AlignImageBias,
    GateWeight,
    GateBias,
    SentimentWeight,
    SentimentBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
    Scalar,
}

impl ParamId {
    pub const ALL: [ParamId; 40] = [
        Self::WordEmbedding,
        Self::PosEmbedding,
        Self::DepEmbedding,
        Self::NerEmbedding,
        Self::CaptionEmbedding,
        Self::TextCls,
        Self::TextSep,
        Self::CompositeWeight,
        Self::CompositeBias,
        Self::PatchWeight,
        Self::PatchBias,
        Self::VisualCls,
        Self::MemoryProjection,
        Self::RelevanceText,
        Self::RelevanceVisual,
        Self::RelevanceCaption,
        Self::LingDep,
        Self::LingPos,
        Self::LingNer,
        Self::LingBias,
        Self::MaskScale,
        Self::AttentionBiasScale,
        Self::TextQuery,
        Self::TextKey,
        Self::TextValue,
        Self::TextOutput,
        Self::VisualQuery,
        Self::VisualKey,
        Self::VisualValue,
        Self::VisualOutput,
        Self::TagWeight,
        Self::TagBias,
        Self::AlignTextWeight,
        Self::AlignTextBias,
        Self::AlignImageWeight,
        Self::AlignImageBias,
        Self::GateWeight,
        Self::GateBias,
        Self::SentimentWeight,
        Self::SentimentBias,
    ];

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::WordEmbedding => "word_embedding",
            Self::PosEmbedding => "pos_embedding",
            Self::DepEmbedding => "dep_embedding",
            Self::NerEmbedding => "ner_embedding",
            Self::CaptionEmbedding => "caption_embedding",
            Self::TextCls => "text_cls",
            Self::TextSep => "text_sep",
            Self::CompositeWeight => "composite_weight",
            Self::CompositeBias => "composite_bias",
            Self::PatchWeight => "patch_weight",
            Self::PatchBias => "patch_bias",
            Self::VisualCls => "visual_cls",
            Self::MemoryProjection => "memory_projection",
            Self::RelevanceText => "relevance_text",
            Self::RelevanceVisual => "relevance_visual",
            Self::RelevanceCaption => "relevance_caption",
            Self::LingDep => "ling_dep",
            Self::LingPos => "ling_pos",
            Self::LingNer => "ling_ner",
            Self::LingBias => "ling_bias",
            Self::MaskScale => "mask_scale",
            Self::AttentionBiasScale => "attention_bias_scale",
            Self::TextQuery => "text_query",
            Self::TextKey => "text_key",
            Self::TextValue => "text_value",
            Self::TextOutput => "text_output",
            Self::VisualQuery => "visual_query",
            Self::VisualKey => "visual_key",
            Self::VisualValue => "visual_value",
            Self::VisualOutput => "visual_output",
            Self::TagWeight => "tag_weight",
            Self::TagBias => "tag_bias",
            Self::AlignTextWeight => "align_text_weight",
            Self::AlignTextBias => "align_text_bias",
            Self::AlignImageWeight => "align_image_weight",
            Self::AlignImageBias => "align_image_bias",
            Self::GateWeight => "gate_weight",
            Self::GateBias => "gate_bias",
            Self::SentimentWeight => "sentiment_weight",
            Self::SentimentBias => "sentiment_bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn kind(self) -> ParamKind {
        use ParamId::*;
        match self {
            WordEmbedding | PosEmbedding | DepEmbedding | NerEmbedding | CaptionEmbedding | TextCls | TextSep
            | VisualCls => ParamKind::Embedding,
            CompositeBias | PatchBias | TagBias | AlignTextBias | AlignImageBias | SentimentBias => ParamKind::Bias,
            LingBias | MaskScale | AttentionBiasScale | GateBias => ParamKind::Scalar,
            _ => ParamKind::Weight,
        }
    }

    pub fn shape(self, c: &RunConfig) -> (usize, usize) {
        use ParamId::*;
        match self {
            WordEmbedding => (c.word_vocab, c.d_t),
            PosEmbedding => (c.pos_vocab, c.d_p),
            DepEmbedding => (c.dep_vocab, c.d_d),
            NerEmbedding => (c.ner_vocab, c.d_n),
            CaptionEmbedding => (c.word_vocab, c.d),
            TextCls | TextSep | CompositeBias | AlignTextBias | AlignImageBias => (1, c.d),
            CompositeWeight => (c.d_t + c.d_p + c.d_d, c.d),
            PatchWeight => (c.d_v, c.d_v),
            PatchBias | VisualCls => (1, c.d_v),
            MemoryProjection | RelevanceVisual => (c.d_v, c.d),
            RelevanceText | RelevanceCaption => (c.d, c.d),
            LingDep => (c.d_d, 1),
            LingPos => (c.d_p, 1),
            LingNer => (c.d_n, 1),
            LingBias | MaskScale | AttentionBiasScale | GateBias => (1, 1),
            TextQuery | TextKey | TextValue | TextOutput | VisualQuery | VisualKey | VisualValue | VisualOutput
            | AlignTextWeight | AlignImageWeight => (c.d, c.d),
            TagWeight | SentimentWeight => (c.d, 3),
            TagBias | SentimentBias => (1, 3),
            GateWeight => (2 * c.d, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.slot()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.slot()]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.tensors[id.slot()].shape(), value.shape(), "set {}", id.name());
        self.tensors[id.slot()] = value;
    }

    /// Leaf node for `id` on `tape` (shared across repeated requests).
    pub fn var(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(id.slot(), self.get(id))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        ParamId::ALL.iter().copied().zip(self.tensors.iter())
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams { tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect() }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Assembles parameters from tensors in [`ParamId::ALL`] order, checking
    /// shapes against `config`.
    pub fn from_tensors(config: &RunConfig, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != ParamId::ALL.len() {
            return Err(crate::Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != id.shape(config) {
                return Err(crate::Error::Checkpoint(format!(
                    "{} has shape {:?}, config implies {:?}",
                    id.name(),
                    t.shape(),
                    id.shape(config)
                )));
            }
        }
        Ok(Self { tensors })
    }
}

/// Seeded initialization.
///
/// Embedding tables and special rows draw from uniform(-0.1, 0.1);
/// projections use Glorot-uniform bounds; biases start at zero. The
/// attention bias scale starts at 0 so the first forward pass is standard
/// attention, the masking scale starts at 0.5, and the balancing gate is
/// all zeros so every initial balancing coefficient is sigmoid(0) = 0.5.
pub fn init_params(config: &RunConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = ParamId::ALL
        .iter()
        .map(|&id| {
            let (rows, cols) = id.shape(config);
            let mut t = Tensor::zeros(rows, cols);
            match id {
                ParamId::MaskScale => t.fill(0.5),
                ParamId::AttentionBiasScale | ParamId::GateWeight | ParamId::GateBias => {}
                _ => match id.kind() {
                    ParamKind::Embedding => uniform(&mut rng, &mut t, 0.1),
                    ParamKind::Weight => {
                        let bound = (6.0 / (rows + cols) as f64).sqrt();
                        uniform(&mut rng, &mut t, bound);
                    }
                    ParamKind::Bias | ParamKind::Scalar => {}
                },
            }
            t
        })
        .collect();
    Ok(ModelParams { tensors })
}

fn uniform(rng: &mut ChaCha8Rng, t: &mut Tensor, bound: f64) {
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_params() {
        let c = RunConfig::default();
        let a = init_params(&c, 7).unwrap();
        let b = init_params(&c, 7).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_ne!(a, init_params(&c, 8).unwrap());
    }

    #[test]
    fn special_scalars_at_init() {
        let p = init_params(&RunConfig::default(), 3).unwrap();
        assert_eq!(p.get(ParamId::AttentionBiasScale).item(), 0.0);
        assert_eq!(p.get(ParamId::MaskScale).item(), 0.5);
        assert!(p.get(ParamId::GateWeight).data().iter().all(|&v| v == 0.0));
        assert_eq!(p.get(ParamId::GateBias).item(), 0.0);
        let emb = p.get(ParamId::WordEmbedding);
        assert!(emb.data().iter().all(|v| v.abs() < 0.1));
        assert!(p.all_finite());
    }

    #[test]
    fn shapes_follow_config_and_names_are_unique() {
        let c = RunConfig::default();
        let p = init_params(&c, 0).unwrap();
        for (id, t) in p.iter() {
            assert_eq!(t.shape(), id.shape(&c), "{}", id.name());
            assert_eq!(ParamId::from_name(id.name()), Some(id));
        }
        for (i, id) in ParamId::ALL.iter().enumerate() {
            assert_eq!(id.slot(), i);
        }
    }

    #[test]
    fn invalid_dims_are_a_configuration_error() {
        let c = RunConfig { d: 30, heads: 4, ..RunConfig::default() };
        assert!(matches!(init_params(&c, 0), Err(crate::Error::Config(_))));
    }
}
