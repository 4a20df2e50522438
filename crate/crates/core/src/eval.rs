//! Exact-match scoring, dataset evaluation and the multi-run harnesses
//! (ablation table, hyperparameter sweep, gradient check).

use rayon::prelude::*;
use serde::Serialize;

use crate::augment::Lexicon;
use crate::config::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::model::predict;
use crate::params::ModelParams;
use crate::training::train;
use crate::types::{AspectSpan, MultimodalInstance};

/// Micro-averaged precision, recall and F1 with their counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1, tp, fp, fn_ }
    }
}

/// Scores predicted against gold aspects, instance by instance. A
/// prediction is a true positive when an unmatched gold aspect has the
/// same bounds and sentiment; each gold aspect matches at most once.
pub fn score(predicted: &[Vec<AspectSpan>], gold: &[Vec<AspectSpan>]) -> EvalMetrics {
    assert_eq!(predicted.len(), gold.len(), "prediction and gold counts differ");
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (p, g) in predicted.iter().zip(gold) {
        let mut used = vec![false; g.len()];
        for a in p {
            if let Some(k) = (0..g.len()).find(|&k| !used[k] && g[k] == *a) {
                used[k] = true;
                tp += 1;
            }
        }
        n_pred += p.len();
        n_gold += g.len();
    }
    EvalMetrics::from_counts(tp, n_pred - tp, n_gold - tp)
}

/// Same matching with sentiments ignored.
pub fn score_spans(predicted: &[Vec<AspectSpan>], gold: &[Vec<AspectSpan>]) -> EvalMetrics {
    let strip = |v: &[Vec<AspectSpan>]| -> Vec<Vec<AspectSpan>> {
        v.iter()
            .map(|s| s.iter().map(|a| AspectSpan { sentiment: crate::types::SentimentLabel::Positive, ..*a }).collect())
            .collect()
    };
    score(&strip(predicted), &strip(gold))
}

/// Metrics plus modality diagnostics for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Span and sentiment must both match.
    pub metrics: EvalMetrics,
    /// Span only.
    pub extraction: EvalMetrics,
    /// Sentiment accuracy when classifying the gold spans.
    pub gold_span_sentiment_accuracy: f64,
    pub mean_alpha_t: f64,
    pub mean_alpha_v: f64,
    /// Mean balancing coefficient over the gold spans.
    pub mean_alpha_j: f64,
    /// Fraction of content tokens masked.
    pub masked_fraction: f64,
    pub instances: usize,
}

struct InstanceResult {
    predicted: Vec<AspectSpan>,
    gold_correct: usize,
    alpha_j_sum: f64,
    alpha_t: f64,
    alpha_v: f64,
    masked: usize,
}

/// Runs the model over `data`: tagger spans for the main metrics, gold
/// spans for the sentiment accuracy and the balancing diagnostics.
pub fn evaluate(params: &ModelParams, config: &RunConfig, data: &[MultimodalInstance]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let results = data
        .par_iter()
        .map(|inst| {
            let pred = predict(params, config, inst, None)?;
            let gold_spans: Vec<(usize, usize)> = inst.aspects.iter().map(AspectSpan::bounds).collect();
            let on_gold = predict(params, config, inst, Some(&gold_spans))?;
            let gold_correct =
                on_gold.aspects.iter().zip(&inst.aspects).filter(|(p, g)| p.span.sentiment == g.sentiment).count();
            Ok(InstanceResult {
                predicted: pred.aspects.iter().map(|a| a.span).collect(),
                gold_correct,
                alpha_j_sum: on_gold.aspects.iter().map(|a| a.alpha_j).sum(),
                alpha_t: pred.alpha_t,
                alpha_v: pred.alpha_v,
                masked: pred.profile.mask.iter().filter(|&&m| m).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(data, &results))
}

fn summarize(data: &[MultimodalInstance], results: &[InstanceResult]) -> Evaluation {
    let predicted: Vec<Vec<AspectSpan>> = results.iter().map(|r| r.predicted.clone()).collect();
    let gold: Vec<Vec<AspectSpan>> = data.iter().map(|i| i.aspects.clone()).collect();
    let n = data.len() as f64;
    let n_gold: usize = gold.iter().map(Vec::len).sum();
    let n_tokens: usize = data.iter().map(MultimodalInstance::len).sum();
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    Evaluation {
        metrics: score(&predicted, &gold),
        extraction: score_spans(&predicted, &gold),
        gold_span_sentiment_accuracy: ratio(results.iter().map(|r| r.gold_correct).sum::<usize>() as f64, n_gold),
        mean_alpha_t: results.iter().map(|r| r.alpha_t).sum::<f64>() / n,
        mean_alpha_v: results.iter().map(|r| r.alpha_v).sum::<f64>() / n,
        mean_alpha_j: ratio(results.iter().map(|r| r.alpha_j_sum).sum(), n_gold),
        masked_fraction: ratio(results.iter().map(|r| r.masked).sum::<usize>() as f64, n_tokens),
        instances: data.len(),
    }
}

/// Train, dev and test splits plus the optional augmentation lexicon.
#[derive(Debug, Clone, Copy)]
pub struct Datasets<'a> {
    pub train: &'a [MultimodalInstance],
    pub dev: &'a [MultimodalInstance],
    pub test: &'a [MultimodalInstance],
    pub lexicon: Option<&'a Lexicon>,
}

/// Trains with `config` and evaluates the selected parameters on the
/// test split.
pub fn run_once(config: &RunConfig, data: Datasets<'_>) -> Result<Evaluation> {
    let outcome = train(config, data.train, data.dev, data.lexicon)?;
    evaluate(&outcome.params, config, data.test)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub runs: Vec<Evaluation>,
}

impl AblationRow {
    fn column(&self, f: impl Fn(&Evaluation) -> f64) -> (f64, f64) {
        mean_std(&self.runs.iter().map(f).collect::<Vec<_>>())
    }
    pub fn precision(&self) -> (f64, f64) {
        self.column(|e| e.metrics.precision)
    }
    pub fn recall(&self) -> (f64, f64) {
        self.column(|e| e.metrics.recall)
    }
    pub fn f1(&self) -> (f64, f64) {
        self.column(|e| e.metrics.f1)
    }
    pub fn alpha_v(&self) -> (f64, f64) {
        self.column(|e| e.mean_alpha_v)
    }
}

/// Seeds `base, base+1, ...`.
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| base + k).collect()
}

/// Runs `cells` in parallel, returning results in input order.
fn run_cells<T: Send>(cells: Vec<RunConfig>, data: Datasets<'_>, f: impl Fn(Evaluation) -> T + Sync) -> Result<Vec<T>> {
    cells.into_par_iter().map(|c| run_once(&c, data).map(&f)).collect()
}

/// One row per [`Variant`], each trained and tested once per seed.
pub fn ablate(config: &RunConfig, data: Datasets<'_>, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    ablate_variants(config, data, seeds, &Variant::ALL)
}

/// Like [`ablate`] restricted to `variants`, in the given order.
pub fn ablate_variants(
    config: &RunConfig,
    data: Datasets<'_>,
    seeds: &[u64],
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for &v in variants {
        for &seed in seeds {
            cells.push(RunConfig { seed, ..config.clone().with_variant(v) });
        }
    }
    let mut evals = run_cells(cells, data, |e| e)?.into_iter();
    Ok(variants
        .iter()
        .map(|v| AblationRow { variant: v.name(), runs: evals.by_ref().take(seeds.len()).collect() })
        .collect())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("variant,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,alpha_v_mean,seeds\n");
    for r in rows {
        let (p, ps) = r.precision();
        let (rc, rs) = r.recall();
        let (f, fs) = r.f1();
        let (av, _) = r.alpha_v();
        out.push_str(&format!(
            "{},{p:.6},{ps:.6},{rc:.6},{rs:.6},{f:.6},{fs:.6},{av:.6},{}\n",
            r.variant,
            r.runs.len()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    Lambda,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::Lambda => "lambda",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gamma" => Some(Self::Gamma),
            "lambda" => Some(Self::Lambda),
            _ => None,
        }
    }

    fn apply(self, config: &RunConfig, value: f64) -> RunConfig {
        let mut c = config.clone();
        match self {
            Self::Gamma => c.gamma = value,
            Self::Lambda => c.lambda = value,
        }
        c
    }
}

pub const DEFAULT_GRID: [f64; 6] = [0.01, 0.03, 0.1, 0.3, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub f1: Vec<f64>,
}

impl SweepRow {
    pub fn f1_mean_std(&self) -> (f64, f64) {
        mean_std(&self.f1)
    }
}

/// Test F1 per grid value and seed, sorted by grid value; duplicate grid
/// values are run once.
pub fn sweep(
    config: &RunConfig,
    param: SweepParam,
    grid: &[f64],
    data: Datasets<'_>,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut values = grid.to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("sweep grid values must be finite".into()));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut cells = Vec::new();
    for &v in &values {
        let c = param.apply(config, v);
        c.validate()?;
        for &seed in seeds {
            cells.push(RunConfig { seed, ..c.clone() });
        }
    }
    let mut f1s = run_cells(cells, data, |e| e.metrics.f1)?.into_iter();
    Ok(values.into_iter().map(|value| SweepRow { value, f1: f1s.by_ref().take(seeds.len()).collect() }).collect())
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{},f1_mean,f1_std,seeds\n", param.name());
    for r in rows {
        let (m, s) = r.f1_mean_std();
        out.push_str(&format!("{},{m:.6},{s:.6},{}\n", r.value, r.f1.len()));
    }
    out
}
