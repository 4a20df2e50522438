use std::path::Path;
use std::process::{Command, Output};

use adaptisent::checkpoint::load_checkpoint;
use adaptisent::init_params;
use adaptisent::params::ParamId;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptisent")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn gen(dir: &Path, n: usize, seed: u64) {
    let out = run(&[
        "gen-data",
        "--n",
        &n.to_string(),
        "--rho",
        "0.5",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn gen_data_writes_deterministic_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, 100, 1);
    gen(&b, 100, 1);
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "meta.json", "stats.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs between reruns");
    }
    let lines = |f: &str| String::from_utf8(read(&a.join(f))).unwrap().lines().count();
    assert_eq!(lines("train.jsonl") + lines("dev.jsonl") + lines("test.jsonl"), 100);
    let stats: serde_json::Value = serde_json::from_slice(&read(&a.join("stats.json"))).unwrap();
    assert_eq!(stats["train"]["instances"], 70);
}

#[test]
fn gen_data_json_is_a_single_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--n", "20", "--out", tmp.path().join("d").to_str().unwrap(), "--json"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["stats"]["test"]["total"].as_u64().unwrap() > 0);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    assert_eq!(code(&run(&["gen-data", "--rho", "1.5", "--out", d.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["gen-data", "--bogus"])), 2);
    assert_eq!(code(&run(&["train", "--data", "/nonexistent/dir", "--out", d.to_str().unwrap()])), 2);
    gen(&d, 30, 0);
    let m = tmp.path().join("m");
    assert_eq!(
        code(&run(&["train", "--data", d.to_str().unwrap(), "--out", m.to_str().unwrap(), "--set", "gamma=2"])),
        2
    );
    assert_eq!(
        code(&run(&["train", "--data", d.to_str().unwrap(), "--out", m.to_str().unwrap(), "--set", "nonsense=1"])),
        2
    );
    assert_eq!(code(&run(&["sweep", "--param", "beta", "--data", d.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["ablate", "--data", d.to_str().unwrap(), "--variants", "full,nope"])), 2);
    assert_eq!(code(&run(&["eval", "--ckpt", "/nonexistent.json", "--data", d.to_str().unwrap()])), 2);
}

#[test]
fn zero_epochs_write_the_initial_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, m) = (tmp.path().join("d"), tmp.path().join("m"));
    gen(&d, 30, 2);
    let out =
        run(&["train", "--data", d.to_str().unwrap(), "--out", m.to_str().unwrap(), "--epochs", "0", "--seed", "7"]);
    assert_eq!(code(&out), 0);
    let (config, params) = load_checkpoint(&m.join("checkpoint.json")).unwrap();
    assert_eq!((config.epochs, config.seed), (0, 7));
    assert_eq!(params, init_params(&config, 7).unwrap());
    assert_eq!(read(&m.join("log.jsonl")), b"");
}

#[test]
fn training_is_reproducible_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, 60, 3);
    let train = |name: &str| {
        let m = tmp.path().join(name);
        let out = run(&["train", "--data", d.to_str().unwrap(), "--out", m.to_str().unwrap(), "--epochs", "2"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        m
    };
    let (m1, m2) = (train("m1"), train("m2"));
    for f in ["checkpoint.json", "log.jsonl", "config.toml"] {
        assert_eq!(read(&m1.join(f)), read(&m2.join(f)), "{f} differs between reruns");
    }
    assert_eq!(String::from_utf8(read(&m1.join("log.jsonl"))).unwrap().lines().count(), 2);

    let ckpt = m1.join("checkpoint.json");
    let eval = || run(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", d.to_str().unwrap(), "--json"]);
    let (e1, e2) = (eval(), eval());
    assert_eq!(code(&e1), 0);
    assert_eq!(e1.stdout, e2.stdout);
    let v: serde_json::Value = serde_json::from_str(&stdout(&e1)).unwrap();
    let f1 = v["metrics"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let gold =
        run(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", d.to_str().unwrap(), "--gold-predictions", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&gold)).unwrap();
    assert_eq!(v["metrics"]["f1"], 1.0);

    let plain = run(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", d.to_str().unwrap()]);
    assert!(stdout(&plain).contains("tp "));
}

#[test]
fn empty_test_split_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, m) = (tmp.path().join("d"), tmp.path().join("m"));
    gen(&d, 30, 4);
    assert_eq!(code(&run(&["train", "--data", d.to_str().unwrap(), "--out", m.to_str().unwrap(), "--epochs", "0"])), 0);
    std::fs::write(d.join("test.jsonl"), "").unwrap();
    let out = run(&["eval", "--ckpt", m.join("checkpoint.json").to_str().unwrap(), "--data", d.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, m) = (tmp.path().join("d"), tmp.path().join("m"));
    gen(&d, 30, 5);
    let out = run(&[
        "train",
        "--data",
        d.to_str().unwrap(),
        "--out",
        m.to_str().unwrap(),
        "--epochs",
        "2",
        "--set",
        "lr=1e300",
        "--set",
        "max_grad_norm=0",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn grad_check_passes_and_lists_every_group() {
    let out = run(&["grad-check", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let names: Vec<&str> = v["groups"].as_array().unwrap().iter().map(|g| g["name"].as_str().unwrap()).collect();
    let expected: Vec<&str> = ParamId::ALL.iter().map(|id| id.name()).collect();
    assert_eq!(names, expected);
    assert_eq!(v["passed"], true);

    let strict = run(&["grad-check", "--tol", "0"]);
    assert_eq!(code(&strict), 1);
    assert!(stdout(&strict).contains("FAIL"));
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, 40, 6);
    let out = run(&["ablate", "--data", d.to_str().unwrap(), "--seeds", "1", "--epochs", "1", "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(names, ["full", "no_captions", "no_alignment", "no_balancing", "no_augmentation", "no_masking"]);
    for (k, col) in header.iter().enumerate().filter(|(_, c)| c.ends_with("_std")) {
        for r in &rows {
            assert_eq!(r[k].parse::<f64>().unwrap(), 0.0, "{col} of {}", r[0]);
        }
    }
}

#[test]
fn sweep_rows_are_sorted_and_follow_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, 30, 7);
    let csv = tmp.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--param",
        "lambda",
        "--grid",
        "0.5,0.01,0.1",
        "--data",
        d.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(read(&csv)).unwrap();
    let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["0.01", "0.1", "0.5"]);
    assert!(text.starts_with("lambda,"));

    let single = run(&["sweep", "--param", "gamma", "--grid", "0.3", "--data", d.to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(stdout(&single).lines().count(), 2);

    let full = run(&["sweep", "--param", "gamma", "--data", d.to_str().unwrap(), "--epochs", "1"]);
    let values: Vec<String> = stdout(&full).lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert_eq!(values, ["0.01", "0.03", "0.1", "0.3", "0.5", "1"]);
}
