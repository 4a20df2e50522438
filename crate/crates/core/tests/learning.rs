use adaptisent::data::{generate, stats, GeneratedData, SyntheticSpec};
use adaptisent::eval::evaluate;
use adaptisent::experiments::spec_for_train_size;
use adaptisent::training::{total_loss, train};
use adaptisent::types::MultimodalInstance;
use adaptisent::{init_params, RunConfig};

fn config_for(data: &GeneratedData, epochs: usize, seed: u64) -> RunConfig {
    RunConfig { epochs, seed, ..RunConfig::default() }.with_vocab(data.vocab)
}

fn without_patches(data: &[MultimodalInstance]) -> Vec<MultimodalInstance> {
    data.iter()
        .map(|inst| {
            let mut i = inst.clone();
            for p in &mut i.patches {
                p.iter_mut().for_each(|x| *x = 0.0);
            }
            i
        })
        .collect()
}

#[test]
fn sentiments_are_balanced() {
    for (seed, rho) in [(0, 0.5), (1, 0.0), (2, 1.0), (3, 0.8)] {
        let data = generate(&SyntheticSpec { n_instances: 1000, rho, seed, ..SyntheticSpec::default() }).unwrap();
        let all: Vec<_> = data.train.iter().chain(&data.dev).chain(&data.test).cloned().collect();
        let s = stats(&all);
        assert!(s.total >= 1000);
        for count in [s.positive, s.negative, s.neutral] {
            let share = count as f64 / s.total as f64;
            assert!((share - 1.0 / 3.0).abs() <= 0.1, "seed {seed}: share {share:.3}");
        }
    }
}

#[test]
fn first_epoch_lowers_the_training_loss() {
    let mut lowered = 0;
    for seed in 0..5 {
        let data = generate(&spec_for_train_size(300, 0.5, 40 + seed)).unwrap();
        let config = config_for(&data, 1, seed);
        let before = total_loss(&init_params(&config, seed).unwrap(), &config, &data.train).unwrap();
        let outcome = train(&config, &data.train, &data.dev, Some(&data.lexicon)).unwrap();
        let after = total_loss(&outcome.params, &config, &data.train).unwrap();
        assert!(after.total.is_finite());
        if after.total < before.total {
            lowered += 1;
        }
    }
    assert!(lowered >= 4, "loss fell in only {lowered} of 5 seeds");
}

#[test]
fn best_epoch_parameters_are_returned() {
    let data = generate(&spec_for_train_size(200, 0.5, 3)).unwrap();
    let config = config_for(&data, 4, 1);
    let outcome = train(&config, &data.train, &data.dev, Some(&data.lexicon)).unwrap();
    assert_eq!(outcome.log.len(), 4);
    let best = outcome.log.iter().map(|r| r.dev_f1).fold(f64::NEG_INFINITY, f64::max);
    let first_best = outcome.log.iter().find(|r| r.dev_f1 == best).unwrap().epoch;
    assert_eq!((outcome.best_dev_f1, outcome.best_epoch), (best, first_best));
    assert_eq!(evaluate(&outcome.params, &config, &data.dev).unwrap().metrics.f1, best);
    let steps: Vec<usize> = outcome.log.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn zero_epochs_return_the_initialization() {
    let data = generate(&spec_for_train_size(20, 0.5, 0)).unwrap();
    let config = config_for(&data, 0, 6);
    let outcome = train(&config, &data.train, &data.dev, None).unwrap();
    assert!(outcome.log.is_empty());
    assert_eq!(outcome.params, init_params(&config, 6).unwrap());
}

#[test]
fn text_signal_alone_is_separable() {
    let data = generate(&spec_for_train_size(600, 0.0, 50)).unwrap();
    let (train_set, dev, test) =
        (without_patches(&data.train), without_patches(&data.dev), without_patches(&data.test));
    let config = RunConfig { no_captions: true, ..config_for(&data, 10, 0) };
    let outcome = train(&config, &train_set, &dev, Some(&data.lexicon)).unwrap();
    let f1 = evaluate(&outcome.params, &config, &test).unwrap().metrics.f1;
    assert!(f1 > 0.9, "text-only F1 {f1:.3}");
}

#[test]
fn image_signal_is_needed_when_planted_in_patches() {
    let data = generate(&spec_for_train_size(600, 1.0, 51)).unwrap();
    let config = config_for(&data, 10, 0);
    let outcome = train(&config, &data.train, &data.dev, Some(&data.lexicon)).unwrap();
    let intact = evaluate(&outcome.params, &config, &data.test).unwrap().gold_span_sentiment_accuracy;
    let blind = evaluate(&outcome.params, &config, &without_patches(&data.test)).unwrap().gold_span_sentiment_accuracy;
    assert!(intact > 0.7, "accuracy with patches {intact:.3}");
    assert!(blind < 0.5, "accuracy without patches {blind:.3}");
}
