//! Training and evaluation loops, checkpoints, metrics and λ-histogram export.

pub mod checkpoint;
pub mod config;
pub mod metrics;
mod trainer;

use std::path::Path;

pub use checkpoint::Checkpoint;
pub use config::{DataConfig, DataSource, HarnessConfig, RunConfig};
pub use metrics::{export_lambda_histogram, Histogram, LambdaSnapshot, TrainRecord, METRICS_HEADER};
pub use trainer::{
    checkpoint_stats, configure_threads, evaluate, load_dataset, total_loss, write_snapshot, RunOutput,
    Trainer,
};

use crate::data::{cifar, Sample};
use crate::error::Result;
use crate::residual::{build_network, Network};
use crate::tensor::{DType, Element};

/// Network stored in a checkpoint, rebuilt at the checkpoint's precision `T`.
pub fn network_from_checkpoint<T: Element>(ckpt: &Checkpoint) -> Result<(RunConfig, Network<T>)> {
    let config = RunConfig::parse(&ckpt.config_text)?;
    let mut net = build_network::<T>(&config.network)?;
    ckpt.restore(&mut net)?;
    Ok((config, net))
}

/// Test split of a CIFAR-format directory, normalized with the checkpoint's statistics.
pub fn load_test_split(ckpt: &Checkpoint, dir: &Path) -> Result<Vec<Sample>> {
    let stats = checkpoint_stats(ckpt)?;
    let dir = cifar::resolve_dir(dir);
    let raw = cifar::read_batch_file(&dir.join(cifar::TEST_FILE))?;
    Ok(raw.iter().map(|r| stats.normalize(r)).collect())
}

/// Test accuracy of the checkpointed network on `dir`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<f64> {
    let test = load_test_split(ckpt, dir)?;
    fn run<T: Element>(ckpt: &Checkpoint, test: &[Sample]) -> Result<f64> {
        let (cfg, mut net) = network_from_checkpoint::<T>(ckpt)?;
        evaluate(&mut net, test, cfg.optim.batch_size)
    }
    match RunConfig::parse(&ckpt.config_text)?.network.precision {
        DType::F32 => run::<f32>(ckpt, &test),
        DType::F64 => run::<f64>(ckpt, &test),
    }
}

/// λ listing and histogram of a checkpoint, written into `out`.
pub fn inspect(ckpt: &Checkpoint, out: &Path) -> Result<LambdaSnapshot> {
    fn snap<T: Element>(ckpt: &Checkpoint) -> Result<(RunConfig, LambdaSnapshot)> {
        let (cfg, net) = network_from_checkpoint::<T>(ckpt)?;
        let it = ckpt.u64("trainer.iteration").unwrap_or(0);
        Ok((cfg, LambdaSnapshot::of(&net, it)))
    }
    let (cfg, snapshot) = match RunConfig::parse(&ckpt.config_text)?.network.precision {
        DType::F32 => snap::<f32>(ckpt)?,
        DType::F64 => snap::<f64>(ckpt)?,
    };
    write_snapshot(out, &snapshot, cfg.harness.histogram_bins)?;
    Ok(snapshot)
}

/// Runs the configured training to completion at the configured precision.
pub fn train(config: RunConfig) -> Result<RunOutput> {
    let data = load_dataset(&config.data)?;
    match config.network.precision {
        DType::F32 => Trainer::<f32>::new(config, data)?.run(),
        DType::F64 => Trainer::<f64>::new(config, data)?.run(),
    }
}
