//! Toy-scale multimodal aspect-based sentiment analysis.
//!
//! Text, image patches and an aspect-aware caption are encoded by small
//! trainable tables. Tokens are scored for visual relevance and linguistic
//! importance, the highest-scoring tokens are masked, and importance-biased
//! text and visual attention are mixed by modality weights derived from
//! the scores. A BIO tagger extracts aspect spans. Each aspect's sentiment
//! comes from a gated mix of its aligned text and image embeddings.
//! Training minimizes token-weighted tagging loss, sentiment loss and an
//! alignment penalty. Every gradient is checked against finite
//! differences.

// Range checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod attention;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod extraction;
pub mod importance;
pub mod model;
pub mod numeric;
pub mod params;
pub mod training;
pub mod types;
pub mod verify;

pub use config::{Ablation, RunConfig, Variant};
pub use error::{Error, Result};
pub use params::{init_params, ModelParams, ParamId};
pub use types::{AspectSpan, MultimodalInstance, SentimentLabel, VocabSizes};
