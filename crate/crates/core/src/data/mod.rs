//! CIFAR-10 ingestion, normalization, augmentation and deterministic batching.

mod augment;
pub mod cifar;
pub mod synthetic;

use std::path::Path;

use rayon::prelude::*;

pub use augment::{augment, augment_at, CropParams, PADDED_SIDE, PADDING};
pub use cifar::{RawRecord, CHANNELS, CLASSES, IMAGE_BYTES, SIDE};

use crate::error::{Error, Result};
use crate::tensor::{streams, Element, Rng, Tensor};

const PLANE: usize = SIDE * SIDE;

/// A normalized image and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
}

/// Per-channel mean and standard deviation of `[0,1]`-scaled pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl DatasetStats {
    /// Population statistics over `records`, accumulated in `f64`.
    pub fn compute(records: &[RawRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset statistics need at least one record".into(),
            ));
        }
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        let count = (records.len() * PLANE) as f64;
        for c in 0..CHANNELS {
            // exact integer sums, then a centred second pass
            let total: u64 = records
                .iter()
                .map(|r| r.pixels[c * PLANE..(c + 1) * PLANE].iter().map(|&p| p as u64).sum::<u64>())
                .sum();
            let m = total as f64 / 255.0 / count;
            let ss: f64 = records
                .iter()
                .map(|r| {
                    r.pixels[c * PLANE..(c + 1) * PLANE]
                        .iter()
                        .map(|&p| (p as f64 / 255.0 - m).powi(2))
                        .sum::<f64>()
                })
                .sum();
            mean[c] = m;
            std[c] = (ss / count).sqrt();
        }
        let stats = DatasetStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn identity() -> Self {
        DatasetStats {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "channel stddev must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }

    pub fn normalize_pixel(&self, channel: usize, pixel: u8) -> f32 {
        ((pixel as f64 / 255.0 - self.mean[channel]) / self.std[channel]) as f32
    }

    /// Normalized representation of a zero-valued pixel, per channel.
    pub fn pad_values(&self) -> [f32; CHANNELS] {
        std::array::from_fn(|c| self.normalize_pixel(c, 0))
    }

    pub fn normalize(&self, record: &RawRecord) -> Sample {
        let data = record
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &p)| self.normalize_pixel(i / PLANE, p))
            .collect();
        Sample {
            image: Tensor::from_vec(&[CHANNELS, SIDE, SIDE], data).expect("record size"),
            label: record.label as usize,
        }
    }
}

/// Normalized training and test splits plus the statistics used.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: DatasetStats,
}

/// Balanced training subset: `(size, seed)`.
pub type SubsetSpec = Option<(usize, u64)>;

impl Dataset {
    /// Normalizes with statistics of the full training split, then keeps the subset if any.
    pub fn from_raw(train: &[RawRecord], test: &[RawRecord], subset: SubsetSpec) -> Result<Self> {
        let stats = DatasetStats::compute(train)?;
        let kept: Vec<&RawRecord> = match subset {
            Some((size, seed)) => {
                let labels: Vec<usize> = train.iter().map(|r| r.label as usize).collect();
                balanced_subset(&labels, size, seed)?
                    .into_iter()
                    .map(|i| &train[i])
                    .collect()
            }
            None => train.iter().collect(),
        };
        Ok(Dataset {
            train: kept.par_iter().map(|r| stats.normalize(r)).collect(),
            test: test.par_iter().map(|r| stats.normalize(r)).collect(),
            stats,
        })
    }

    pub fn pad_values(&self) -> [f32; CHANNELS] {
        self.stats.pad_values()
    }
}

/// Loads the 50000/10000 CIFAR-10 binary splits from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    load_cifar10_subset(dir, None)
}

pub fn load_cifar10_subset(dir: &Path, subset: SubsetSpec) -> Result<Dataset> {
    let (train, test) = cifar::load_raw(dir)?;
    Dataset::from_raw(&train, &test, subset)
}

/// Indices of a class-balanced subset: every class count is within one of `size / classes`.
///
/// Classes are filled round-robin from per-class shuffles, so a class that runs out
/// yields its share to the others. The result is sorted.
pub fn balanced_subset(labels: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "subset of {size} requested from {} samples",
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = Rng::derive(seed, streams::SUBSET);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        rng.shuffle(pool);
        pool.reverse();
    }
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        for pool in pools.iter_mut() {
            if out.len() == size {
                break;
            }
            if let Some(i) = pool.pop() {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// One epoch of shuffled index batches; the final short batch is kept.
pub fn epoch_batches(len: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    chunk(order, batch_size)
}

/// Sequential batches over the whole split.
pub fn test_view(len: usize, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    chunk((0..len).collect(), batch_size)
}

fn chunk(order: Vec<usize>, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Stacks `samples[indices]` into a `[B,3,32,32]` tensor plus labels.
///
/// With `augment`, crop offsets and mirror flags are drawn from the generator in
/// batch order before the images are filled in parallel.
pub fn assemble<T: Element>(
    samples: &[Sample],
    indices: &[usize],
    augment: Option<(&mut Rng, [f32; CHANNELS])>,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= samples.len()) {
        return Err(Error::InvalidArgument(format!(
            "sample index {bad} out of range for {} samples",
            samples.len()
        )));
    }
    let (crops, pad) = match augment {
        Some((rng, pad)) => (
            Some(indices.iter().map(|_| CropParams::sample(rng)).collect::<Vec<_>>()),
            pad,
        ),
        None => (None, [0.0; CHANNELS]),
    };
    let mut data = vec![T::zero(); indices.len() * IMAGE_BYTES];
    data.par_chunks_mut(IMAGE_BYTES)
        .enumerate()
        .for_each(|(k, dst)| {
            let src = &samples[indices[k]].image;
            match &crops {
                Some(c) => augment::write_crop(src.data(), c[k], pad, dst),
                None => {
                    for (d, &s) in dst.iter_mut().zip(src.data()) {
                        *d = T::from_f64_lossy(s as f64);
                    }
                }
            }
        });
    let labels = indices.iter().map(|&i| samples[i].label).collect();
    Ok((
        Tensor::from_vec(&[indices.len(), CHANNELS, SIDE, SIDE], data)?,
        labels,
    ))
}
