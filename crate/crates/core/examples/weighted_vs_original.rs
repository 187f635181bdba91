//! Trains the weighted and original variants on the same balanced subset with
//! the same iteration budget for several seeds and compares final training loss.
//!
//!     cargo run --release --example weighted_vs_original -- [n] [iterations] [seeds]
//!
//! The defaults (n=9, 2000 iterations, 3 seeds) take hours on one core.

use wrsn::harness::{self, RunConfig};

/// Shared settings for one variant at one seed; the schedule drops at half and three quarters of the run.
pub fn config(variant: &str, n: usize, iterations: u64, seed: u64) -> wrsn::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut overrides = vec![
        format!("variant={variant}"),
        format!("units_per_block={n}"),
        format!("total_iterations={iterations}"),
        format!("schedule={}:0.1,{}:0.1", iterations / 2, iterations * 3 / 4),
        format!("seed={seed}"),
        "subset_size=2000".into(),
        "subset_seed=1".into(),
        "log_interval=100".into(),
        "eval_interval=0".into(),
    ];
    match std::env::var("WRSN_CIFAR_DIR") {
        Ok(dir) => overrides.push(format!("data_dir={dir}")),
        Err(_) => overrides.push("dataset=synthetic".into()),
    }
    cfg.apply_overrides(&overrides)?;
    Ok(cfg)
}

fn main() -> wrsn::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(9) as usize;
    let iterations = args.get(1).copied().unwrap_or(2000);
    let seeds = args.get(2).copied().unwrap_or(3);
    println!("n={n} ({} layers), {iterations} iterations, {seeds} seeds", 6 * n + 4);

    let mut wins = 0;
    for seed in 1..=seeds {
        let mut finals = Vec::new();
        for variant in ["weighted", "original"] {
            let run = harness::train(config(variant, n, iterations, seed)?)?;
            let last = run.records.last().expect("at least the final record");
            println!("seed {seed} {variant:<8} final loss {:.4} ({:.0}s)", last.loss, last.wall_s);
            finals.push(last.loss);
        }
        if finals[0] <= finals[1] {
            wins += 1;
        }
    }
    println!("weighted final loss <= original in {wins} of {seeds} seeds");
    Ok(())
}
