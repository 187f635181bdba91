//! Trains a small weighted network for a few hundred steps and writes the
//! residual-weight listing and histogram at the scaled snapshot grid.
//!
//!     cargo run --release --example lambda_histogram [-- out_dir]

use wrsn::harness::{self, export_lambda_histogram, RunConfig};

fn main() -> wrsn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/lambda_histogram".into());
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&[
        "dataset=synthetic".to_string(),
        "synthetic_train=1000".into(),
        "synthetic_test=200".into(),
        "units_per_block=3".into(),
        "base_width=8".into(),
        "batch_size=64".into(),
        "total_iterations=400".into(),
        "schedule=200:0.1,300:0.1".into(),
        "lambda_lr=0.01".into(),
        "log_interval=50".into(),
        "eval_interval=0".into(),
        format!("out_dir={out}"),
    ])?;
    println!("snapshot iterations {:?}", cfg.snapshot_iterations());
    let bins = cfg.harness.histogram_bins;
    let run = harness::train(cfg)?;
    for snap in &run.snapshots {
        let hist = export_lambda_histogram(&snap.lambdas(), bins);
        let zero = hist.counts[hist.zero_bin()];
        println!(
            "iter {:4}: {} weights, {zero} in the zero bin, range [{:+.4}, {:+.4}]",
            snap.iteration,
            hist.total(),
            snap.lambdas().iter().copied().fold(f64::INFINITY, f64::min),
            snap.lambdas().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
    }
    println!("listings and histograms in {out}");
    Ok(())
}
