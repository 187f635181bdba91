//! Stops a short run halfway, saves a checkpoint, resumes from the file and
//! compares the continuation with an uninterrupted run of the same config.
//!
//!     cargo run --release --example checkpoint_resume

use wrsn::harness::{load_dataset, Checkpoint, RunConfig, Trainer};

fn main() -> wrsn::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&[
        "dataset=synthetic",
        "synthetic_train=512",
        "synthetic_test=128",
        "units_per_block=1",
        "dropout=0.1",
        "batch_size=32",
        "total_iterations=40",
        "schedule=20:0.1",
        "log_interval=5",
        "eval_interval=20",
    ])?;
    let data = load_dataset(&cfg.data)?;

    let mut straight = Trainer::<f32>::new(cfg.clone(), data.clone())?;
    let reference = straight.run()?;

    let dir = std::env::temp_dir().join(format!("wrsn-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("half.wrsn");
    let mut first = Trainer::<f32>::new(cfg, data.clone())?;
    let mut resumed_records = first.run_to(20)?.records;
    first.checkpoint().save(&path)?;
    drop(first);

    let ckpt = Checkpoint::load(&path)?;
    println!("{}: {} entries, iteration {}", path.display(), ckpt.entries.len(), ckpt.u64("trainer.iteration")?);
    let mut second = Trainer::<f32>::from_checkpoint(&ckpt, data)?;
    resumed_records.extend(second.run()?.records);

    for (a, b) in reference.records.iter().zip(&resumed_records) {
        let same = if a.same_metrics(b) { "identical" } else { "DIFFERENT" };
        println!("iter {:3}  loss {:.6}  resumed {:.6}  {same}", a.iteration, a.loss, b.loss);
    }
    let mut cp = Checkpoint::new(String::new());
    cp.capture(&mut straight.network);
    let mut cr = Checkpoint::new(String::new());
    cr.capture(&mut second.network);
    println!("final parameters bitwise equal: {}", cp.entries == cr.entries);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
