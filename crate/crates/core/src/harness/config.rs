//! Plain `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::residual::{NetworkConfig, Variant, BLOCKS};
use crate::tensor::DType;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// CIFAR-10 binary batches under `data_dir`.
    Cifar10,
    /// Generated in memory by [`crate::data::synthetic`].
    Synthetic,
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            DataSource::Cifar10 => "cifar10",
            DataSource::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub data_dir: PathBuf,
    /// Balanced training subset size; 0 keeps the whole split.
    pub subset_size: usize,
    pub subset_seed: u64,
    pub synthetic_seed: u64,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    /// Evaluate on the first `test_size` test images; 0 uses all.
    pub test_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Cifar10,
            data_dir: PathBuf::from("data/cifar-10-batches-bin"),
            subset_size: 0,
            subset_seed: 0,
            synthetic_seed: 0,
            synthetic_train: 50_000,
            synthetic_test: 10_000,
            test_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarnessConfig {
    /// Directory for metrics, snapshots and checkpoints; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub log_interval: u64,
    /// Test evaluation period in iterations; 0 disables evaluation.
    pub eval_interval: u64,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_interval: u64,
    /// Snapshot iterations; `None` scales the default grid to the run length.
    pub snapshot_iterations: Option<Vec<u64>>,
    pub histogram_bins: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            out_dir: None,
            log_interval: 100,
            eval_interval: 400,
            checkpoint_interval: 0,
            snapshot_iterations: None,
            histogram_bins: 20,
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub optim: OptimizerConfig,
    pub data: DataConfig,
    pub harness: HarnessConfig,
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "units_per_block",
    "variant",
    "dropout",
    "seed",
    "precision",
    "lambda_lr_mult",
    "num_classes",
    "base_width",
    "base_lr",
    "lambda_lr",
    "momentum",
    "weight_decay",
    "schedule",
    "total_iterations",
    "batch_size",
    "dataset",
    "data_dir",
    "subset_size",
    "subset_seed",
    "synthetic_seed",
    "synthetic_train",
    "synthetic_test",
    "test_size",
    "out_dir",
    "log_interval",
    "eval_interval",
    "checkpoint_interval",
    "snapshot_iterations",
    "histogram_bins",
];

fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join<V: ToString>(items: impl IntoIterator<Item = V>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("duplicate key {key}"),
                });
            }
            cfg.set(key, value.trim()).map_err(|e| match e {
                Error::UnknownKey(_) => e,
                other => Error::Config {
                    line: i + 1,
                    message: other.to_string(),
                },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides in order, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (key, value) = o.as_ref().split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("override {:?} is not key=value", o.as_ref()))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (n, o, d, h) = (
            &mut self.network,
            &mut self.optim,
            &mut self.data,
            &mut self.harness,
        );
        match key {
            "units_per_block" => n.units_per_block = num(key, value)?,
            "variant" => {
                n.variant = Variant::parse(value).ok_or_else(|| {
                    Error::InvalidArgument(format!("variant must be weighted or original, got {value:?}"))
                })?
            }
            "dropout" => {
                let r: Vec<f64> = list(key, value)?;
                n.dropout_ratios = match r.len() {
                    1 => [r[0]; BLOCKS],
                    BLOCKS => [r[0], r[1], r[2]],
                    _ => {
                        return Err(Error::InvalidArgument(
                            "dropout takes one ratio or one per block".into(),
                        ))
                    }
                }
            }
            "seed" => n.seed = num(key, value)?,
            "precision" => {
                n.precision = match value {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(Error::InvalidArgument(format!("precision must be f32 or f64, got {value:?}"))),
                }
            }
            "lambda_lr_mult" => n.lambda_lr_mult = num(key, value)?,
            "num_classes" => n.num_classes = num(key, value)?,
            "base_width" => n.base_width = num(key, value)?,
            "base_lr" => o.base_lr = num(key, value)?,
            "lambda_lr" => o.lambda_lr = num(key, value)?,
            "momentum" => o.momentum = num(key, value)?,
            "weight_decay" => o.weight_decay = num(key, value)?,
            "schedule" => {
                o.schedule = if value == "none" || value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|pair| {
                            let (at, m) = pair.trim().split_once(':').ok_or_else(|| {
                                Error::InvalidArgument(format!("schedule entry {pair:?} is not iteration:multiplier"))
                            })?;
                            Ok((num(key, at.trim())?, num(key, m.trim())?))
                        })
                        .collect::<Result<_>>()?
                }
            }
            "total_iterations" => o.total_iterations = num(key, value)?,
            "batch_size" => o.batch_size = num(key, value)?,
            "dataset" => {
                d.source = match value {
                    "cifar10" => DataSource::Cifar10,
                    "synthetic" => DataSource::Synthetic,
                    _ => return Err(Error::InvalidArgument(format!("dataset must be cifar10 or synthetic, got {value:?}"))),
                }
            }
            "data_dir" => d.data_dir = PathBuf::from(value),
            "subset_size" => d.subset_size = num(key, value)?,
            "subset_seed" => d.subset_seed = num(key, value)?,
            "synthetic_seed" => d.synthetic_seed = num(key, value)?,
            "synthetic_train" => d.synthetic_train = num(key, value)?,
            "synthetic_test" => d.synthetic_test = num(key, value)?,
            "test_size" => d.test_size = num(key, value)?,
            "out_dir" => h.out_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "log_interval" => h.log_interval = num(key, value)?,
            "eval_interval" => h.eval_interval = num(key, value)?,
            "checkpoint_interval" => h.checkpoint_interval = num(key, value)?,
            "snapshot_iterations" => {
                h.snapshot_iterations = if value == "auto" {
                    None
                } else {
                    Some(list(key, value)?)
                }
            }
            "histogram_bins" => h.histogram_bins = num(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        let n = &self.network;
        if n.units_per_block == 0 || n.num_classes == 0 || n.base_width == 0 {
            return Err(Error::InvalidArgument(
                "units_per_block, num_classes and base_width must be positive".into(),
            ));
        }
        if n.dropout_ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidArgument("dropout ratios must lie in [0, 1)".into()));
        }
        if !(n.lambda_lr_mult.is_finite() && n.lambda_lr_mult >= 0.0) {
            return Err(Error::InvalidArgument("lambda_lr_mult must be finite and non-negative".into()));
        }
        if self.harness.log_interval == 0 || self.harness.histogram_bins == 0 {
            return Err(Error::InvalidArgument(
                "log_interval and histogram_bins must be positive".into(),
            ));
        }
        if self.data.source == DataSource::Synthetic
            && (self.data.synthetic_train == 0 || self.data.synthetic_test == 0)
        {
            return Err(Error::InvalidArgument("synthetic splits must be non-empty".into()));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let (n, o, d, h) = (&self.network, &self.optim, &self.data, &self.harness);
        Ok(match key {
            "units_per_block" => n.units_per_block.to_string(),
            "variant" => n.variant.name().to_string(),
            "dropout" => join(n.dropout_ratios),
            "seed" => n.seed.to_string(),
            "precision" => n.precision.name().to_string(),
            "lambda_lr_mult" => n.lambda_lr_mult.to_string(),
            "num_classes" => n.num_classes.to_string(),
            "base_width" => n.base_width.to_string(),
            "base_lr" => o.base_lr.to_string(),
            "lambda_lr" => o.lambda_lr.to_string(),
            "momentum" => o.momentum.to_string(),
            "weight_decay" => o.weight_decay.to_string(),
            "schedule" if o.schedule.is_empty() => "none".to_string(),
            "schedule" => join(o.schedule.iter().map(|(at, m)| format!("{at}:{m}"))),
            "total_iterations" => o.total_iterations.to_string(),
            "batch_size" => o.batch_size.to_string(),
            "dataset" => d.source.name().to_string(),
            "data_dir" => d.data_dir.display().to_string(),
            "subset_size" => d.subset_size.to_string(),
            "subset_seed" => d.subset_seed.to_string(),
            "synthetic_seed" => d.synthetic_seed.to_string(),
            "synthetic_train" => d.synthetic_train.to_string(),
            "synthetic_test" => d.synthetic_test.to_string(),
            "test_size" => d.test_size.to_string(),
            "out_dir" => h.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "log_interval" => h.log_interval.to_string(),
            "eval_interval" => h.eval_interval.to_string(),
            "checkpoint_interval" => h.checkpoint_interval.to_string(),
            "snapshot_iterations" => match &h.snapshot_iterations {
                None => "auto".to_string(),
                Some(v) => join(v),
            },
            "histogram_bins" => h.histogram_bins.to_string(),
            _ => return Err(Error::UnknownKey(key.to_string())),
        })
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Snapshot iterations for this run length.
    pub fn snapshot_iterations(&self) -> Vec<u64> {
        match &self.harness.snapshot_iterations {
            Some(v) => v.clone(),
            None => self.optim.snapshot_grid(),
        }
    }
}
