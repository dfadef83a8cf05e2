//! End-to-end experiment: simulate, extract, cross-validate, fuse with
//! out-of-fold estimates and sweep the training-set size.
//!
//! Run: `cargo run --release --example run_experiment [config.toml]`
//!
//! The shipped configuration takes a couple of minutes on one core.

use std::path::PathBuf;

use clickqc::pipeline::cmd_experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/experiment.toml")));
    let report = cmd_experiment(&config)?;

    let (mean, sd) = report.cv.mean_std_r2();
    println!("grouped CV R2 {mean:.4} +/- {sd:.4} over {} folds", report.cv.folds.len());
    println!("\nmethod     lambda  mean phi  median DSC");
    for s in &report.fusion {
        println!("{:<10} {:>6}  {:>8.2}  {:>10.4}", s.method, s.lambda, s.mean_phi, s.median);
    }
    println!("\ntraining images  R2");
    for p in &report.sweep {
        println!("{:>15}  {:.4} +/- {:.4}", p.train_images, p.r2_mean, p.r2_std);
    }
    Ok(())
}
