//! Presets for the synthetic learning checks: the dataset recipe for a
//! requested training-set size and the multi-seed smoke run whose mean dev
//! F1 calibrates the learning threshold.

use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate, SyntheticSpec};
use crate::error::Result;
use crate::eval::mean_std;
use crate::training::train;

pub const SMOKE_TRAIN: usize = 2000;
pub const SMOKE_EPOCHS: usize = 20;
pub const SMOKE_RHO: f64 = 0.5;
pub const SMOKE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Required five-seed mean of the best dev F1. Set from the pilot, whose
/// measured mean was 0.921 with every seed above 0.91, so the margin
/// absorbs seed variance and slower machines.
pub const SMOKE_THRESHOLD: f64 = 0.80;
/// Wall-clock budget for a single smoke training run.
pub const SMOKE_SECONDS: f64 = 300.0;

/// Generator settings whose training split has exactly `train` instances
/// under the default split fractions.
pub fn spec_for_train_size(train: usize, rho: f64, seed: u64) -> SyntheticSpec {
    let base = SyntheticSpec { rho, seed, ..SyntheticSpec::default() };
    let mut n = (train as f64 / base.train_fraction).floor() as usize;
    while ((base.train_fraction * n as f64).round() as usize) < train {
        n += 1;
    }
    SyntheticSpec { n_instances: n, ..base }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmokeRun {
    pub seed: u64,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
    pub seconds: f64,
}

/// Generates a dataset with `seed`, trains the default configuration with
/// the same seed and reports the best dev F1.
pub fn smoke_run(seed: u64, train_size: usize, epochs: usize, rho: f64) -> Result<SmokeRun> {
    let data = generate(&spec_for_train_size(train_size, rho, seed))?;
    let config = RunConfig { seed, epochs, ..RunConfig::default() }.with_vocab(data.vocab);
    let start = Instant::now();
    let outcome = train(&config, &data.train, &data.dev, Some(&data.lexicon))?;
    Ok(SmokeRun {
        seed,
        best_dev_f1: outcome.best_dev_f1,
        best_epoch: outcome.best_epoch,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotReport {
    pub train_size: usize,
    pub epochs: usize,
    pub rho: f64,
    pub runs: Vec<SmokeRun>,
    pub mean_dev_f1: f64,
    pub std_dev_f1: f64,
    pub min_dev_f1: f64,
    pub max_seconds: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Runs [`smoke_run`] once per seed, sequentially so the timings are
/// per-run wall clock.
pub fn pilot(seeds: &[u64], train_size: usize, epochs: usize, rho: f64) -> Result<PilotReport> {
    let runs = seeds.iter().map(|&s| smoke_run(s, train_size, epochs, rho)).collect::<Result<Vec<_>>>()?;
    let f1s: Vec<f64> = runs.iter().map(|r| r.best_dev_f1).collect();
    let (mean, std) = mean_std(&f1s);
    let max_seconds = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    Ok(PilotReport {
        train_size,
        epochs,
        rho,
        min_dev_f1: f1s.iter().copied().fold(f64::INFINITY, f64::min),
        mean_dev_f1: mean,
        std_dev_f1: std,
        max_seconds,
        threshold: SMOKE_THRESHOLD,
        passed: mean >= SMOKE_THRESHOLD && max_seconds <= SMOKE_SECONDS,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_split_has_requested_size() {
        for n in [1, 7, 100, 2000, 2001] {
            let spec = spec_for_train_size(n, 0.5, 0);
            assert_eq!((spec.train_fraction * spec.n_instances as f64).round() as usize, n);
        }
    }
}
