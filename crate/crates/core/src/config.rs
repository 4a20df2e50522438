//! Run configuration: hyperparameters, dimensions, optimizer settings and
//! ablation switches.
//!
//! The on-disk form is a flat `key = value` file whose keys are the field
//! names below; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::VocabSizes;

/// Values used by the original full-scale setup, kept for reference. The
/// toy defaults in [`RunConfig::default`] differ where the pretrained
/// setting does not transfer.
pub mod reference {
    pub const GAMMA: f64 = 0.3;
    pub const LAMBDA: f64 = 0.1;
    pub const HIDDEN: usize = 768;
    pub const HEADS: usize = 8;
    pub const LEARNING_RATE: f64 = 2e-5;
    pub const BATCH_SIZE: usize = 16;
    pub const MAX_TOKENS: usize = 60;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_captions: bool,
    pub no_alignment: bool,
    pub no_balancing: bool,
    pub no_augmentation: bool,
    pub no_masking: bool,
}

/// Named rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoCaptions,
    NoAlignment,
    NoBalancing,
    NoAugmentation,
    NoMasking,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Self::Full, Self::NoCaptions, Self::NoAlignment, Self::NoBalancing, Self::NoAugmentation, Self::NoMasking];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoCaptions => "no_captions",
            Self::NoAlignment => "no_alignment",
            Self::NoBalancing => "no_balancing",
            Self::NoAugmentation => "no_augmentation",
            Self::NoMasking => "no_masking",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Switches for this row on top of `base`.
    pub fn apply(self, base: Ablation) -> Ablation {
        let mut a = base;
        match self {
            Self::Full => {}
            Self::NoCaptions => a.no_captions = true,
            Self::NoAlignment => a.no_alignment = true,
            Self::NoBalancing => a.no_balancing = true,
            Self::NoAugmentation => a.no_augmentation = true,
            Self::NoMasking => a.no_masking = true,
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Linguistic/visual trade-off in the combined importance score.
    pub gamma: f64,
    /// Alignment regularization strength.
    pub lambda: f64,
    /// Shared hidden width.
    pub d: usize,
    pub d_t: usize,
    /// Patch feature width.
    pub d_v: usize,
    pub d_p: usize,
    pub d_d: usize,
    pub d_n: usize,
    pub heads: usize,
    pub word_vocab: usize,
    pub pos_vocab: usize,
    pub dep_vocab: usize,
    pub ner_vocab: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global L2 bound on each batch gradient; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub tau_coherence: f64,
    /// Per-token substitution probability of the augmentation stub.
    pub augment_rate: f64,
    /// Route a sigmoid surrogate gradient through the hard mask into the
    /// threshold scale.
    pub straight_through_mask: bool,
    pub straight_through_temperature: f64,
    pub no_captions: bool,
    pub no_alignment: bool,
    pub no_balancing: bool,
    pub no_augmentation: bool,
    pub no_masking: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: reference::GAMMA,
            lambda: reference::LAMBDA,
            d: 32,
            d_t: 16,
            d_v: 16,
            d_p: 8,
            d_d: 8,
            d_n: 8,
            heads: 2,
            word_vocab: 320,
            pos_vocab: 8,
            dep_vocab: 9,
            ner_vocab: 3,
            lr: 1e-2,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_grad_norm: 1.0,
            warmup_fraction: 0.1,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            tau_coherence: 0.5,
            augment_rate: 0.15,
            straight_through_mask: false,
            straight_through_temperature: 0.05,
            no_captions: false,
            no_alignment: false,
            no_balancing: false,
            no_augmentation: false,
            no_masking: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let dims = [
            ("d", self.d),
            ("d_t", self.d_t),
            ("d_v", self.d_v),
            ("d_p", self.d_p),
            ("d_d", self.d_d),
            ("d_n", self.d_n),
            ("heads", self.heads),
            ("word_vocab", self.word_vocab),
            ("pos_vocab", self.pos_vocab),
            ("dep_vocab", self.dep_vocab),
            ("ner_vocab", self.ner_vocab),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d = {} is not divisible by heads = {}", self.d, self.heads)));
        }
        let unit =
            [("gamma", self.gamma), ("warmup_fraction", self.warmup_fraction), ("augment_rate", self.augment_rate)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(-1.0..=1.0).contains(&self.tau_coherence) {
            return Err(Error::Config(format!("tau_coherence = {} is outside [-1, 1]", self.tau_coherence)));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("lr and adam_eps must be > 0, weight_decay >= 0".into()));
        }
        if !(self.max_grad_norm >= 0.0) || !self.max_grad_norm.is_finite() {
            return Err(Error::Config(format!("max_grad_norm = {} must be finite and >= 0", self.max_grad_norm)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.straight_through_temperature > 0.0) {
            return Err(Error::Config("straight_through_temperature must be > 0".into()));
        }
        Ok(())
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_captions: self.no_captions,
            no_alignment: self.no_alignment,
            no_balancing: self.no_balancing,
            no_augmentation: self.no_augmentation,
            no_masking: self.no_masking,
        }
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.no_captions = a.no_captions;
        self.no_alignment = a.no_alignment;
        self.no_balancing = a.no_balancing;
        self.no_augmentation = a.no_augmentation;
        self.no_masking = a.no_masking;
        self
    }

    pub fn with_variant(self, v: Variant) -> Self {
        let a = v.apply(self.ablation());
        self.with_ablation(a)
    }

    pub fn vocab(&self) -> VocabSizes {
        VocabSizes {
            words: self.word_vocab,
            pos: self.pos_vocab,
            dep: self.dep_vocab,
            ner: self.ner_vocab,
            patch_dim: self.d_v,
        }
    }

    pub fn with_vocab(mut self, vocab: VocabSizes) -> Self {
        self.word_vocab = vocab.words;
        self.pos_vocab = vocab.pos;
        self.dep_vocab = vocab.dep;
        self.ner_vocab = vocab.ner;
        self.d_v = vocab.patch_dim;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Parses a flat `key = value` document, then applies `overrides`
    /// (`key=value` strings) on top.
    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self, Error> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(format!("config parse error: {}", e.message())))?;
        for ov in overrides {
            let (key, raw) =
                ov.split_once('=').ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = parse_scalar(raw);
            table.insert(key.to_string(), value);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let text = match path {
            Some(p) => {
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?
            }
            None => String::new(),
        };
        Self::from_str_with_overrides(&text, overrides)
    }

    /// Flat `key = value` rendering that [`RunConfig::from_str_with_overrides`]
    /// reads back.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.trim_matches('"').to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_reference_values() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.gamma, 0.3);
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.d % c.heads, 0);
    }

    #[test]
    fn rejects_bad_dims() {
        let c = RunConfig { heads: 3, ..RunConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig { d_p: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { gamma: 1.5, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let c = RunConfig { no_masking: true, seed: 42, ..RunConfig::default() };
        let parsed = RunConfig::from_str_with_overrides(&c.to_text(), &[]).unwrap();
        assert_eq!(parsed, c);

        let text = "gamma = 0.5\nno_captions = true\n# comment\nepochs = 3\n";
        let o = RunConfig::from_str_with_overrides(text, &["epochs=7".into(), "lambda = 0".into()]).unwrap();
        assert_eq!(o.gamma, 0.5);
        assert!(o.ablation().no_captions);
        assert_eq!(o.epochs, 7);
        assert_eq!(o.lambda, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_str_with_overrides("gammma = 0.1", &[]).is_err());
    }

    #[test]
    fn variants_toggle_exactly_one_switch() {
        let base = Ablation::default();
        assert_eq!(Variant::Full.apply(base), base);
        for v in &Variant::ALL[1..] {
            let a = v.apply(base);
            let on = [a.no_captions, a.no_alignment, a.no_balancing, a.no_augmentation, a.no_masking];
            assert_eq!(on.iter().filter(|&&b| b).count(), 1, "{}", v.name());
        }
    }

    #[test]
    fn integer_literals_fill_real_fields() {
        let c =
            RunConfig::from_str_with_overrides("gamma = 1", &["lambda=1".to_string(), "lr=1e-3".to_string()]).unwrap();
        assert_eq!((c.gamma, c.lambda, c.lr), (1.0, 1.0, 1e-3));
    }
}
