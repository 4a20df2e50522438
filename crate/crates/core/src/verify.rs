//! Full-model gradient check against central finite differences.
//!
//! Small random batches are built for each combination of sentence length
//! and patch count. The mask and loss weights are pinned at the base
//! point, so the objective being differentiated is smooth. For every
//! parameter tensor the coordinates with the largest analytic gradient are
//! checked, together with a few random ones.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::model::Decisions;
use crate::numeric::gradcheck::{central_difference_at, relative_error, DEFAULT_EPSILON};
use crate::numeric::{Tape, Tensor};
use crate::params::{init_params, ModelParams, ParamId};
use crate::training::{decisions, instance_loss, loss_and_grad};
use crate::types::{AspectSpan, MultimodalInstance, SentimentLabel};

pub const LENGTHS: [usize; 3] = [2, 3, 5];
pub const PATCH_COUNTS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tol: f64,
    pub batches: usize,
    pub passed: bool,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// A random in-vocabulary instance with `len` tokens and `patches`
/// patches; one or two aspects, a short caption.
pub fn random_instance(
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    id: String,
    len: usize,
    patches: usize,
) -> MultimodalInstance {
    let ids = |rng: &mut ChaCha8Rng, n: usize, hi: usize, lo: usize| -> Vec<u32> {
        (0..n).map(|_| rng.random_range(lo..hi.max(lo + 1)) as u32).collect()
    };
    let lo_word = usize::from(config.word_vocab > 1);
    let mut aspects = vec![AspectSpan::new(0, 1.max(len / 2), SentimentLabel::ALL[rng.random_range(0..3)])];
    if len >= 3 {
        aspects.push(AspectSpan::new(len - 1, len, SentimentLabel::ALL[rng.random_range(0..3)]));
    }
    let caption_len = rng.random_range(0..3);
    MultimodalInstance {
        id,
        tokens: ids(rng, len, config.word_vocab, lo_word),
        pos: ids(rng, len, config.pos_vocab, 0),
        dep: ids(rng, len, config.dep_vocab, 0),
        ner: ids(rng, len, config.ner_vocab, 0),
        patches: (0..patches).map(|_| (0..config.d_v).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        caption_tokens: ids(rng, caption_len, config.word_vocab, lo_word),
        aspects,
    }
}

/// Parameters at a generic point: the seeded initialization with the
/// zero-initialized scalars (attention bias scale, gate) moved off zero.
pub fn generic_params(config: &RunConfig, seed: u64) -> Result<ModelParams> {
    let mut p = init_params(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    p.set(ParamId::AttentionBiasScale, Tensor::scalar(0.7));
    p.set(ParamId::GateBias, Tensor::scalar(0.2));
    for id in [ParamId::GateWeight, ParamId::TagBias, ParamId::SentimentBias, ParamId::LingBias, ParamId::CompositeBias]
    {
        for v in p.get_mut(id).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    Ok(p)
}

/// Coordinates to probe: the `top` largest analytic magnitudes, then up to
/// `extra` random coordinates whose analytic value is either exactly zero
/// or large enough for central differences to resolve in double
/// precision.
fn pick_coords(grad: &Tensor, top: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| grad.data()[b].abs().total_cmp(&grad.data()[a].abs()).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.iter().copied().take(top).collect();
    let resolvable = |i: usize| {
        let g = grad.data()[i].abs();
        g == 0.0 || g >= 1e-6
    };
    let mut tries = 0;
    while picked.len() < (top + extra).min(grad.len()) && tries < 20 * (extra + 1) {
        tries += 1;
        let i = rng.random_range(0..grad.len());
        if !picked.contains(&i) && resolvable(i) {
            picked.push(i);
        }
    }
    picked
}

/// Checks every parameter tensor on two-instance batches for each
/// `(L, K)` in [`LENGTHS`] x [`PATCH_COUNTS`]. `samples` coordinates are
/// probed per tensor and batch.
pub fn grad_check(config: &RunConfig, samples: usize, tol: f64, seed: u64) -> Result<GradCheckReport> {
    config.validate()?;
    let start = Instant::now();
    let mut config = config.clone();
    // the surrogate gradient is by construction not the derivative of the
    // forward value
    config.straight_through_mask = false;
    let params = generic_params(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<GroupReport> = ParamId::ALL
        .iter()
        .map(|id| GroupReport { name: id.name(), max_rel_error: 0.0, coords_checked: 0, max_abs_grad: 0.0 })
        .collect();
    let top = samples.div_ceil(2);
    let extra = samples - top;
    let mut batches = 0;
    for &len in &LENGTHS {
        for &k in &PATCH_COUNTS {
            let batch: Vec<MultimodalInstance> =
                (0..2).map(|b| random_instance(&config, &mut rng, format!("gc-{len}-{k}-{b}"), len, k)).collect();
            let pinned = decisions(&params, &config, &batch)?;
            let (_, grads) = loss_and_grad(&params, &config, &batch, Some(&pinned), 1.0)?;
            for (slot, id) in ParamId::ALL.iter().enumerate() {
                let g = &grads.tensors()[slot];
                let coords = pick_coords(g, top, extra, &mut rng);
                let objective = |x: &Tensor| {
                    let mut p = params.clone();
                    p.set(*id, x.clone());
                    pinned_loss(&p, &config, &batch, &pinned)
                };
                let numeric = central_difference_at(objective, params.get(*id), &coords, DEFAULT_EPSILON)?;
                let report = &mut groups[slot];
                for (&i, &n) in coords.iter().zip(&numeric) {
                    report.max_rel_error = report.max_rel_error.max(relative_error(g.data()[i], n));
                    report.max_abs_grad = report.max_abs_grad.max(g.data()[i].abs());
                }
                report.coords_checked += coords.len();
            }
            batches += 1;
        }
    }
    let passed = groups.iter().all(|g| g.max_rel_error < tol);
    Ok(GradCheckReport { groups, tol, batches, passed, seconds: start.elapsed().as_secs_f64() })
}

/// Loss with pinned decisions; NaN when the forward pass fails, which the
/// finite-difference routine reports as an error.
fn pinned_loss(params: &ModelParams, config: &RunConfig, batch: &[MultimodalInstance], pinned: &[Decisions]) -> f64 {
    let mut total = 0.0;
    for (inst, d) in batch.iter().zip(pinned) {
        let mut tape = Tape::new();
        match instance_loss(&mut tape, params, config, inst, Some(d)) {
            Ok((_, parts)) => total += parts.total,
            Err(_) => return f64::NAN,
        }
    }
    total
}
