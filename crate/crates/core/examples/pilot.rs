//! Calibration pilot for the learning smoke threshold.
//!
//! Trains the default configuration on five synthetic datasets (rho 0.5,
//! 2000 training instances, 20 epochs), prints each seed's best dev F1 and
//! writes the full report, including the threshold it supports, to the
//! path given as the first argument (default `pilot.json`).
//!
//! ```text
//! cargo run --release -p adaptisent --example pilot -- results/pilot.json
//! ```

use std::path::PathBuf;

use adaptisent::experiments::{pilot, SMOKE_EPOCHS, SMOKE_RHO, SMOKE_SEEDS, SMOKE_TRAIN};

fn main() {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("pilot.json"), PathBuf::from);
    let report = match pilot(&SMOKE_SEEDS, SMOKE_TRAIN, SMOKE_EPOCHS, SMOKE_RHO) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("pilot failed: {e}");
            std::process::exit(1);
        }
    };
    for r in &report.runs {
        println!("seed {}  best dev F1 {:.4} at epoch {}  ({:.1} s)", r.seed, r.best_dev_f1, r.best_epoch, r.seconds);
    }
    println!(
        "mean {:.4}  std {:.4}  min {:.4}  threshold {:.2}  {}",
        report.mean_dev_f1,
        report.std_dev_f1,
        report.min_dev_f1,
        report.threshold,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).expect("create output directory");
    }
    std::fs::write(&out, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
        .expect("write report");
    println!("report written to {}", out.display());
}
