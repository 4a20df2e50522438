//! Domain types shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Sentiment polarity. The declaration order is the tie-breaking order
/// for argmax: positive < negative < neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Neutral,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [Self::Positive, Self::Negative, Self::Neutral];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Highest-scoring label; ties go to the earliest label.
    pub fn argmax(scores: &[f64]) -> Self {
        debug_assert_eq!(scores.len(), Self::COUNT);
        Self::ALL[argmax(scores)]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
            Self::Neutral => "neutral",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First index of the maximum; `0` for an empty slice.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Half-open token span `[start, end)` with its polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectSpan {
    pub start: usize,
    pub end: usize,
    pub sentiment: SentimentLabel,
}

impl AspectSpan {
    pub fn new(start: usize, end: usize, sentiment: SentimentLabel) -> Self {
        Self { start, end, sentiment }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

/// One sample: pre-tokenized text with tags, patch features, an
/// aspect-aware caption and the gold aspects.
///
/// Field names are the JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalInstance {
    pub id: String,
    pub tokens: Vec<u32>,
    pub pos: Vec<u32>,
    pub dep: Vec<u32>,
    pub ner: Vec<u32>,
    pub patches: Vec<Vec<f64>>,
    pub caption_tokens: Vec<u32>,
    pub aspects: Vec<AspectSpan>,
}

impl MultimodalInstance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }
}

/// Id-space sizes the model's tables are built for, plus the patch width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub words: usize,
    pub pos: usize,
    pub dep: usize,
    pub ner: usize,
    pub patch_dim: usize,
}

/// Word id reserved for masked tokens.
pub const MASK_TOKEN: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyText,
    NoPatches,
    TagLengthMismatch { field: &'static str, expected: usize, found: usize },
    IdOutOfRange { field: &'static str, position: usize, id: u32, limit: usize },
    PatchWidth { patch: usize, expected: usize, found: usize },
    NonFinitePatch { patch: usize },
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    OverlappingSpans { first: (usize, usize), second: (usize, usize) },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyText => write!(f, "empty text"),
            Self::NoPatches => write!(f, "no patches"),
            Self::TagLengthMismatch { field, expected, found } => {
                write!(f, "tag length mismatch: {field} has {found} entries, expected {expected}")
            }
            Self::IdOutOfRange { field, position, id, limit } => {
                write!(f, "id out of range: {field}[{position}] = {id}, limit {limit}")
            }
            Self::PatchWidth { patch, expected, found } => {
                write!(f, "patch width mismatch: patch {patch} has {found} features, expected {expected}")
            }
            Self::NonFinitePatch { patch } => write!(f, "non-finite feature in patch {patch}"),
            Self::SpanOutOfBounds { start, end, len } => {
                write!(f, "span out of bounds: ({start}, {end}) in text of length {len}")
            }
            Self::OverlappingSpans { first, second } => {
                write!(f, "overlapping spans: {first:?} and {second:?}")
            }
        }
    }
}

/// Collects every schema violation; an empty list means the instance is
/// well-formed.
pub fn validate_instance(inst: &MultimodalInstance, vocab: &VocabSizes) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = inst.tokens.len();
    if len == 0 {
        out.push(Violation::EmptyText);
    }
    for (field, seq) in [("pos", &inst.pos), ("dep", &inst.dep), ("ner", &inst.ner)] {
        if seq.len() != len {
            out.push(Violation::TagLengthMismatch { field, expected: len, found: seq.len() });
        }
    }
    let id_fields: [(&'static str, &Vec<u32>, usize); 5] = [
        ("tokens", &inst.tokens, vocab.words),
        ("pos", &inst.pos, vocab.pos),
        ("dep", &inst.dep, vocab.dep),
        ("ner", &inst.ner, vocab.ner),
        ("caption_tokens", &inst.caption_tokens, vocab.words),
    ];
    for (field, seq, limit) in id_fields {
        for (position, &id) in seq.iter().enumerate() {
            if id as usize >= limit {
                out.push(Violation::IdOutOfRange { field, position, id, limit });
            }
        }
    }
    if inst.patches.is_empty() {
        out.push(Violation::NoPatches);
    }
    for (i, p) in inst.patches.iter().enumerate() {
        if p.len() != vocab.patch_dim {
            out.push(Violation::PatchWidth { patch: i, expected: vocab.patch_dim, found: p.len() });
        } else if p.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinitePatch { patch: i });
        }
    }
    for a in &inst.aspects {
        if a.start >= a.end || a.end > len {
            out.push(Violation::SpanOutOfBounds { start: a.start, end: a.end, len });
        }
    }
    let mut spans: Vec<(usize, usize)> = inst.aspects.iter().map(AspectSpan::bounds).collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            out.push(Violation::OverlappingSpans { first: w[0], second: w[1] });
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn well_formed_instance_passes() {
        assert!(validate_instance(&instance(), &vocab()).is_empty());
    }

    #[test]
    fn short_pos_sequence_is_reported() {
        let mut inst = instance();
        inst.pos.pop();
        let v = validate_instance(&inst, &vocab());
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("tag length mismatch"));
    }

    #[test]
    fn overlapping_spans_are_reported() {
        let mut inst = instance();
        inst.aspects =
            vec![AspectSpan::new(0, 2, SentimentLabel::Positive), AspectSpan::new(1, 3, SentimentLabel::Neutral)];
        let v = validate_instance(&inst, &vocab());
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("overlapping spans"));
    }

    #[test]
    fn out_of_range_ids_and_bad_patches() {
        let mut inst = instance();
        inst.tokens[1] = 20;
        inst.caption_tokens.push(99);
        inst.patches[1].pop();
        inst.aspects.push(AspectSpan::new(2, 5, SentimentLabel::Negative));
        let v = validate_instance(&inst, &vocab());
        assert_eq!(v.len(), 4, "{v:?}");
        inst.patches.clear();
        assert!(validate_instance(&inst, &vocab()).contains(&Violation::NoPatches));
    }

    #[test]
    fn label_order_and_argmax_ties() {
        assert!(SentimentLabel::Positive < SentimentLabel::Negative);
        assert!(SentimentLabel::Negative < SentimentLabel::Neutral);
        assert_eq!(SentimentLabel::argmax(&[0.2, 0.4, 0.4]), SentimentLabel::Negative);
        assert_eq!(SentimentLabel::argmax(&[1.0, 1.0, 1.0]), SentimentLabel::Positive);
        for l in SentimentLabel::ALL {
            assert_eq!(SentimentLabel::from_index(l.index()), Some(l));
        }
    }
}
