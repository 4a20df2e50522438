//! Joint objective, optimizer and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{candidate_seed, filter_augmented, perturb_text, AugmentedCandidate, Lexicon};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::extraction::gold_tags;
use crate::model::{aspect_forward, coherence_score, forward, Decisions};
use crate::numeric::{NumericError, Tape, Tensor, Var};
use crate::params::{init_params, ModelParams, ParamId, ParamKind};
use crate::types::{validate_instance, MultimodalInstance};

/// `w_i = L * S_i / sum(S)`; mean exactly one up to rounding. Fails when
/// the scores do not have a finite positive sum, which only happens once
/// the parameters have degenerated.
pub fn token_weights(s: &[f64]) -> Result<Vec<f64>, NumericError> {
    let total: f64 = s.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(NumericError::NonFinite(format!("importance scores sum to {total}")));
    }
    let len = s.len() as f64;
    Ok(s.iter().map(|&v| len * v / total).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub extraction_ce: f64,
    pub sentiment_ce: f64,
    pub alignment: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.extraction_ce += other.extraction_ce;
        self.sentiment_ce += other.sentiment_ce;
        self.alignment += other.alignment;
        self.total += other.total;
    }

    fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            extraction_ce: self.extraction_ce * c,
            sentiment_ce: self.sentiment_ce * c,
            alignment: self.alignment * c,
            total: self.total * c,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.extraction_ce, self.sentiment_ce, self.alignment, self.total].iter().all(|v| v.is_finite())
    }
}

/// Loss of one instance on `tape`: token-weighted tagging cross-entropy,
/// sentiment cross-entropy on the gold spans and the alignment penalty.
pub fn instance_loss(
    tape: &mut Tape,
    params: &ModelParams,
    config: &RunConfig,
    inst: &MultimodalInstance,
    pinned: Option<&Decisions>,
) -> Result<(Var, LossBreakdown)> {
    let fwd = forward(tape, params, config, inst, pinned)?;
    let tags: Vec<usize> = gold_tags(inst.len(), &inst.aspects).iter().map(|t| t.index()).collect();
    let extraction = tape.cross_entropy(fwd.tag_logits, &tags, &fwd.token_weights);
    let mut parts = LossBreakdown { extraction_ce: tape.scalar(extraction), ..Default::default() };
    let mut total = extraction;
    for a in &inst.aspects {
        let af = aspect_forward(tape, params, config, &fwd, a.bounds())?;
        let ce = tape.cross_entropy(af.logits, &[a.sentiment.index()], &[1.0]);
        parts.sentiment_ce += tape.scalar(ce);
        total = tape.add(total, ce);
        if !config.no_alignment {
            let reg = tape.scale(af.distance, config.lambda);
            parts.alignment += tape.scalar(reg);
            total = tape.add(total, reg);
        }
    }
    parts.total = tape.scalar(total);
    Ok((total, parts))
}

/// Summed loss over `batch`.
pub fn total_loss(params: &ModelParams, config: &RunConfig, batch: &[MultimodalInstance]) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    for inst in batch {
        let mut tape = Tape::new();
        let (_, parts) = instance_loss(&mut tape, params, config, inst, None)?;
        tape.check()?;
        sum.accumulate(&parts);
    }
    if !sum.is_finite() {
        return Err(NumericError::NonFinite(format!("loss {sum:?}")).into());
    }
    Ok(sum)
}

/// Summed loss over `batch` and its gradient scaled by `scale`.
///
/// `pinned`, when given, has one entry per instance.
pub fn loss_and_grad(
    params: &ModelParams,
    config: &RunConfig,
    batch: &[MultimodalInstance],
    pinned: Option<&[Decisions]>,
    scale: f64,
) -> Result<(LossBreakdown, ModelParams)> {
    let mut grads = params.zeros_like();
    let mut sum = LossBreakdown::default();
    for (k, inst) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let (out, parts) = instance_loss(&mut tape, params, config, inst, pinned.map(|p| &p[k]))?;
        tape.backward(out, scale, grads.tensors_mut())?;
        sum.accumulate(&parts);
    }
    Ok((sum, grads))
}

/// Decisions each instance of `batch` takes under `params`.
pub fn decisions(params: &ModelParams, config: &RunConfig, batch: &[MultimodalInstance]) -> Result<Vec<Decisions>> {
    batch
        .iter()
        .map(|inst| {
            let mut tape = Tape::new();
            Ok(forward(&mut tape, params, config, inst, None)?.decisions())
        })
        .collect()
}

/// Adaptive-moment optimizer with weight decay applied directly to the
/// parameters. Only embedding tables and projection matrices decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ModelParams, config: &RunConfig) -> Self {
        let zeros = params.zeros_like().tensors().to_vec();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (slot, id) in ParamId::ALL.iter().enumerate() {
            let decay = matches!(id.kind(), ParamKind::Embedding | ParamKind::Weight);
            let g = grads.tensors()[slot].data();
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let p = params.tensors_mut()[slot].data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                let wd = if decay { self.weight_decay * p[i] } else { 0.0 };
                p[i] -= lr * (update + wd);
            }
        }
    }
}

/// Learning rate at zero-based `step`: linear ramp over `warmup` steps, then
/// constant.
pub fn learning_rate(base: f64, step: usize, warmup: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Epoch means per training instance.
    pub total: f64,
    pub extraction_ce: f64,
    pub sentiment_ce: f64,
    pub alignment: f64,
    pub dev_f1: f64,
    /// Augmented instances admitted this epoch.
    pub augmented: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRecord>,
    /// `0` when no epoch ran.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

fn validate_all(config: &RunConfig, data: &[MultimodalInstance]) -> Result<()> {
    let vocab = config.vocab();
    for (k, inst) in data.iter().enumerate() {
        let v = validate_instance(inst, &vocab);
        if !v.is_empty() {
            return Err(Error::Invalid { id: inst.id.clone(), line: k + 1, violations: v });
        }
    }
    Ok(())
}

/// Trains from `init_params(config, config.seed)` and returns the
/// parameters of the epoch with the best dev F1 (earliest on ties).
///
/// Augmentation needs a `lexicon`; without one it is skipped.
/// Rescales `grads` in place so their global L2 norm is at most
/// `max_norm` and returns the norm before rescaling. A bound of zero leaves
/// the gradient untouched.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.tensors().iter().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            for g in t.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

pub fn train(
    config: &RunConfig,
    train_set: &[MultimodalInstance],
    dev_set: &[MultimodalInstance],
    lexicon: Option<&Lexicon>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    validate_all(config, train_set)?;
    validate_all(config, dev_set)?;

    let mut params = init_params(config, config.seed)?;
    let mut outcome =
        TrainOutcome { params: params.clone(), log: Vec::new(), best_epoch: 0, best_dev_f1: f64::NEG_INFINITY };
    if config.epochs == 0 {
        outcome.best_dev_f1 = 0.0;
        return Ok(outcome);
    }

    let candidates: Vec<MultimodalInstance> = match lexicon {
        Some(lex) if !config.no_augmentation => train_set
            .iter()
            .map(|inst| {
                let mut c = perturb_text(inst, lex, candidate_seed(config.seed, &inst.id), config.augment_rate);
                c.id = format!("{}#aug", inst.id);
                c
            })
            .collect(),
        _ => Vec::new(),
    };

    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let warmup = (config.warmup_fraction * total_steps as f64).ceil() as usize;
    let mut opt = AdamW::new(&params, config);
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut pool: Vec<&MultimodalInstance> = train_set.iter().collect();
        let kept = if candidates.is_empty() {
            Vec::new()
        } else {
            let scored = candidates
                .iter()
                .map(|c| {
                    Ok(AugmentedCandidate::new(c.clone(), coherence_score(&params, config, c)?, config.tau_coherence))
                })
                .collect::<Result<Vec<_>>>()?;
            filter_augmented(&scored, config.tau_coherence, true)
        };
        pool.extend(kept.iter());

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        pool.shuffle(&mut rng);

        let mut epoch_loss = LossBreakdown::default();
        for chunk in pool.chunks(config.batch_size) {
            let batch: Vec<MultimodalInstance> = chunk.iter().map(|&i| i.clone()).collect();
            let (loss, grads) = loss_and_grad(&params, config, &batch, None, 1.0 / batch.len() as f64)
                .map_err(|e| Error::Divergence { step, detail: e.to_string() })?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { step, detail: format!("non-finite loss or gradient: {loss:?}") });
            }
            epoch_loss.accumulate(&loss);
            let mut grads = grads;
            clip_grad_norm(&mut grads, config.max_grad_norm);
            opt.step(&mut params, &grads, learning_rate(config.lr, step, warmup));
            step += 1;
            if !params.all_finite() {
                return Err(Error::Divergence { step, detail: "parameters became non-finite".into() });
            }
        }

        let dev_f1 = if dev_set.is_empty() { 0.0 } else { evaluate(&params, config, dev_set)?.metrics.f1 };
        let mean = epoch_loss.scaled(1.0 / pool.len() as f64);
        outcome.log.push(LogRecord {
            epoch,
            step,
            total: mean.total,
            extraction_ce: mean.extraction_ce,
            sentiment_ce: mean.sentiment_ce,
            alignment: mean.alignment,
            dev_f1,
            augmented: kept.len(),
        });
        if dev_f1 > outcome.best_dev_f1 {
            outcome.best_dev_f1 = dev_f1;
            outcome.best_epoch = epoch;
            outcome.params = params.clone();
        }
    }
    Ok(outcome)
}
