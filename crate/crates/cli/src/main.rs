//! `adaptisent` command-line entry point.
//!
//! Exit status: 0 on success, 1 when a run fails (divergence, write
//! errors, a failed gradient check), 2 for invalid arguments or inputs.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptisent::checkpoint::{load_checkpoint, save_checkpoint};
use adaptisent::data::{generate, read_data_dir, write_data_dir, DataDir, SyntheticSpec};
use adaptisent::eval::{
    ablate_variants, ablation_csv, evaluate, score, score_spans, seed_list, sweep, sweep_csv, SweepParam, DEFAULT_GRID,
};
use adaptisent::training::train;
use adaptisent::types::AspectSpan;
use adaptisent::verify::grad_check;
use adaptisent::{Error, RunConfig, Variant};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "adaptisent", version, about = "Toy-scale multimodal aspect-based sentiment analysis")]
struct Cli {
    /// Worker threads for evaluation and for independent ablation/sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/dev/test splits.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and per-epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a split.
    Eval(EvalArgs),
    /// Train every ablation variant over several seeds and print a CSV table.
    Ablate(ExperimentArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Retrain over a grid of gamma or lambda values and print a CSV table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set lr=0.005` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Failure> {
        let mut overrides = self.overrides.clone();
        if let Some(e) = self.epochs {
            overrides.push(format!("epochs={e}"));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Generator settings file; the flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Total number of instances across the three splits.
    #[arg(long)]
    n: Option<usize>,
    /// Probability that an aspect's sentiment is planted in the patches.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Print the split statistics as one JSON record instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Split to score: train, dev or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Score the gold annotations as if they were predictions.
    #[arg(long)]
    gold_predictions: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Number of training seeds per row, counted up from the config seed.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Comma-separated subset of rows (default: all six).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Coordinates probed per parameter tensor and batch.
    #[arg(long, default_value_t = 6)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// gamma or lambda.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A message with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }
    fn runtime(message: impl Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Parse { .. } | Error::Invalid { .. } | Error::Data(_) | Error::Checkpoint(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } | Error::Numeric(_) | Error::Divergence { .. } => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Failure::usage(format!("{}: {}", path.display(), e.message())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.n {
        spec.n_instances = n;
    }
    if let Some(rho) = a.rho {
        spec.rho = rho;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let data = generate(&spec)?;
    write_data_dir(&a.out, &data, Some(&spec)).map_err(runtime)?;
    let dir = DataDir { train: data.train, dev: data.dev, test: data.test, meta: None };
    let s = dir.stats();
    if a.json {
        println!("{}", json!({ "out": a.out, "stats": s }));
    } else {
        print!("{}{}{}", s.train.table("train"), s.dev.table("dev"), s.test.table("test"));
        println!("wrote {}", a.out.display());
    }
    Ok(())
}

/// Writes failures on outputs the user asked for are runtime errors even
/// when the underlying io error is "not found" (a missing parent dir).
fn runtime(e: Error) -> Failure {
    match e {
        Error::Io { .. } => Failure::runtime(e),
        other => other.into(),
    }
}

/// Loads a data directory and fits the configuration's id-space sizes to
/// its metadata. Without metadata the instances are checked against the
/// configured sizes instead.
fn load_data(path: &Path, config: RunConfig) -> Result<(DataDir, RunConfig), Failure> {
    let dir = read_data_dir(path)?;
    let config = match dir.vocab() {
        Some(v) => config.with_vocab(v),
        None => {
            let vocab = config.vocab();
            for (name, split) in [("train", &dir.train), ("dev", &dir.dev), ("test", &dir.test)] {
                if let Some((k, v)) = split
                    .iter()
                    .enumerate()
                    .map(|(k, inst)| (k, adaptisent::types::validate_instance(inst, &vocab)))
                    .find(|(_, v)| !v.is_empty())
                {
                    let e = Error::Invalid { id: split[k].id.clone(), line: k + 1, violations: v };
                    return Err(Failure::usage(format!("{name}: {e}")));
                }
            }
            config
        }
    };
    config.validate()?;
    Ok((dir, config))
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let (dir, config) = load_data(&a.data, a.config.load()?)?;
    if dir.meta.is_none() && !config.no_augmentation {
        eprintln!("warning: {} has no metadata, training without augmentation", a.data.display());
    }
    let outcome = train(&config, &dir.train, &dir.dev, dir.datasets().lexicon)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", a.out.display())))?;
    save_checkpoint(&a.out.join("checkpoint.json"), &config, &outcome.params).map_err(runtime)?;
    let log: String = outcome.log.iter().map(|r| serde_json::to_string(r).expect("log serializes") + "\n").collect();
    write(&a.out.join("log.jsonl"), &log)?;
    write(&a.out.join("config.toml"), &config.to_text())?;
    let dev = if dir.dev.is_empty() { None } else { Some(evaluate(&outcome.params, &config, &dir.dev)?) };
    if a.json {
        println!(
            "{}",
            json!({ "best_epoch": outcome.best_epoch, "best_dev_f1": outcome.best_dev_f1, "dev": dev, "out": a.out })
        );
    } else {
        for r in &outcome.log {
            println!("epoch {:>3}  loss {:.4}  dev F1 {:.4}  augmented {}", r.epoch, r.total, r.dev_f1, r.augmented);
        }
        match dev {
            Some(e) => println!(
                "best epoch {}  dev P {:.4} R {:.4} F1 {:.4}  (tp {} fp {} fn {})",
                outcome.best_epoch,
                e.metrics.precision,
                e.metrics.recall,
                e.metrics.f1,
                e.metrics.tp,
                e.metrics.fp,
                e.metrics.fn_
            ),
            None => println!("no dev split; kept the final parameters"),
        }
        println!("wrote {}", a.out.display());
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let (config, params) = load_checkpoint(&a.ckpt)?;
    let (dir, config) = load_data(&a.data, config)?;
    let data = match a.split.as_str() {
        "train" => &dir.train,
        "dev" => &dir.dev,
        "test" => &dir.test,
        other => return Err(Failure::usage(format!("unknown split `{other}`, expected train, dev or test"))),
    };
    if data.is_empty() {
        return Err(Failure::usage(format!("the {} split is empty", a.split)));
    }
    let record = if a.gold_predictions {
        let gold: Vec<Vec<AspectSpan>> = data.iter().map(|i| i.aspects.clone()).collect();
        json!({ "metrics": score(&gold, &gold), "extraction": score_spans(&gold, &gold), "instances": data.len() })
    } else {
        serde_json::to_value(evaluate(&params, &config, data)?).expect("evaluation serializes")
    };
    if a.json {
        println!("{record}");
    } else {
        let m = &record["metrics"];
        println!(
            "{} split, {} instances\nprecision {:.4}  recall {:.4}  F1 {:.4}\ntp {}  fp {}  fn {}",
            a.split,
            record["instances"],
            num(&m["precision"]),
            num(&m["recall"]),
            num(&m["f1"]),
            m["tp"],
            m["fp"],
            m["fn"]
        );
    }
    Ok(())
}

fn num(v: &serde_json::Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ablate_cmd(a: ExperimentArgs) -> Result<(), Failure> {
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    let variants = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|n| Variant::from_name(n).ok_or_else(|| Failure::usage(format!("unknown variant `{n}`"))))
            .collect::<Result<Vec<_>, _>>()?
    };
    let (dir, config) = load_data(&a.data, a.config.load()?)?;
    let rows = ablate_variants(&config, dir.datasets(), &seed_list(config.seed, a.seeds), &variants)?;
    emit(a.out.as_deref(), &ablation_csv(&rows))
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<(), Failure> {
    if a.samples == 0 {
        return Err(Failure::usage("--samples must be at least 1"));
    }
    if a.tol.is_nan() || a.tol < 0.0 {
        return Err(Failure::usage("--tol must be >= 0"));
    }
    let config = a.config.load()?;
    let report = grad_check(&config, a.samples, a.tol, config.seed)?;
    if a.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("{:<24} {:>12} {:>8} {:>12}", "group", "max rel err", "coords", "max |grad|");
        for g in &report.groups {
            let flag = if g.max_rel_error < report.tol { "" } else { "  FAIL" };
            println!(
                "{:<24} {:>12.3e} {:>8} {:>12.3e}{flag}",
                g.name, g.max_rel_error, g.coords_checked, g.max_abs_grad
            );
        }
        println!(
            "{} batches, worst {:.3e}, tol {:e}, {:.2} s: {}",
            report.batches,
            report.worst(),
            report.tol,
            report.seconds,
            if report.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "gradient check failed: worst relative error {:.3e} >= {:e}",
            report.worst(),
            report.tol
        )))
    }
}

fn sweep_cmd(a: SweepArgs) -> Result<(), Failure> {
    let param = SweepParam::from_name(&a.param)
        .ok_or_else(|| Failure::usage(format!("unknown sweep parameter `{}`, expected gamma or lambda", a.param)))?;
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    let grid = if a.grid.is_empty() { DEFAULT_GRID.to_vec() } else { a.grid.clone() };
    let (dir, config) = load_data(&a.data, a.config.load()?)?;
    let rows = sweep(&config, param, &grid, dir.datasets(), &seed_list(config.seed, a.seeds))?;
    emit(a.out.as_deref(), &sweep_csv(param, &rows))
}
