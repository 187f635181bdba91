//! Desk-scale training run: n=1 weighted network, 2000 balanced training images,
//! 2000 iterations at batch 128 with the schedule compressed to the run length.
//!
//! Uses CIFAR-10 when `WRSN_CIFAR_DIR` points at the binary batches, synthetic data otherwise.
//!
//!     cargo run --release --example train_smoke [-- out_dir]

use wrsn::harness::{self, RunConfig};

fn main() -> wrsn::Result<()> {
    let mut cfg = RunConfig::default();
    let mut overrides = vec![
        "units_per_block=1".to_string(),
        "total_iterations=2000".into(),
        "schedule=1000:0.1,1500:0.1".into(),
        "subset_size=2000".into(),
        "subset_seed=1".into(),
        "seed=1".into(),
        "log_interval=100".into(),
        "eval_interval=500".into(),
        "test_size=1000".into(),
    ];
    match std::env::var("WRSN_CIFAR_DIR") {
        Ok(dir) => overrides.push(format!("data_dir={dir}")),
        Err(_) => overrides.push("dataset=synthetic".into()),
    }
    if let Some(out) = std::env::args().nth(1) {
        overrides.push(format!("out_dir={out}"));
    }
    cfg.apply_overrides(&overrides)?;
    println!("threads: {}", harness::configure_threads());

    let out = harness::train(cfg)?;
    for r in &out.records {
        let acc = r.test_acc.map(|a| format!("  test_acc {a:.3}")).unwrap_or_default();
        println!("iter {:5}  loss {:.4}  lr {:<7.0e}  {:.1}s{acc}", r.iteration, r.loss, r.base_lr, r.wall_s);
    }
    let last = out.snapshots.last().expect("weighted run has snapshots");
    println!("lambda at {}: {:?}", last.iteration, last.lambdas());
    Ok(())
}
