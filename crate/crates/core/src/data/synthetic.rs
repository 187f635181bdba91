//! Deterministic CIFAR-format stand-in data.
//!
//! Record `i` has label `i % 10` and depends only on `(seed, i)`. Each class
//! is an oriented sinusoidal grating inside a disc of random size and position,
//! over a weaker grating of a random class. Orientation noise, colour jitter and
//! pixel noise make neighbouring classes overlap.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use super::cifar::{self, RawRecord, CHANNELS, CLASSES, RECORDS_PER_FILE, SIDE, TRAIN_FILES};
use crate::error::Result;
use crate::tensor::{streams, Rng};

pub const TRAIN_RECORDS: usize = TRAIN_FILES.len() * RECORDS_PER_FILE;
pub const TEST_RECORDS: usize = RECORDS_PER_FILE;

const PALETTE: [[f64; CHANNELS]; CLASSES] = [
    [150.0, 110.0, 100.0],
    [110.0, 140.0, 110.0],
    [100.0, 110.0, 150.0],
    [140.0, 140.0, 100.0],
    [140.0, 100.0, 140.0],
    [100.0, 140.0, 140.0],
    [130.0, 120.0, 110.0],
    [110.0, 120.0, 130.0],
    [120.0, 130.0, 120.0],
    [125.0, 125.0, 125.0],
];

fn grating(label: usize, rng: &mut Rng) -> impl Fn(f64, f64) -> f64 {
    let theta = label as f64 * PI / CLASSES as f64 + 0.2 * rng.standard_normal();
    let period = 4.0 + (label % 4) as f64 * 1.5 + 0.5 * rng.standard_normal();
    let phase = 2.0 * PI * rng.uniform();
    let (s, c) = theta.sin_cos();
    let k = 2.0 * PI / period.max(2.5);
    move |x, y| (k * (x * c + y * s) + phase).sin()
}

/// Generates record `index` of the stream keyed by `seed`.
pub fn record(seed: u64, index: u64) -> RawRecord {
    let label = (index % CLASSES as u64) as usize;
    let mut rng = Rng::derive(seed, streams::SYNTHETIC + index);
    let object = grating(label, &mut rng);
    let clutter = grating(rng.below(CLASSES), &mut rng);
    let amp = 25.0 + 35.0 * rng.uniform();
    let clutter_amp = amp * (0.3 + 0.4 * rng.uniform());
    let radius = 7.0 + 9.0 * rng.uniform();
    let (cx, cy) = (8.0 + 16.0 * rng.uniform(), 8.0 + 16.0 * rng.uniform());
    let jitter: [f64; CHANNELS] = std::array::from_fn(|_| 40.0 * rng.standard_normal());
    let mut wave = [0.0f64; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (fx, fy) = (x as f64, y as f64);
            let inside = (fx - cx).hypot(fy - cy) <= radius;
            wave[y * SIDE + x] = if inside { amp * object(fx, fy) } else { clutter_amp * clutter(fx, fy) };
        }
    }
    let mut pixels = Vec::with_capacity(CHANNELS * SIDE * SIDE);
    for ch in 0..CHANNELS {
        let base = PALETTE[label][ch] + jitter[ch];
        let gain = if ch == label % CHANNELS { 1.0 } else { 0.6 };
        for &w in &wave {
            let v = base + gain * w + 35.0 * rng.standard_normal();
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    RawRecord {
        label: label as u8,
        pixels,
    }
}

/// Records `start..start + count`, generated in parallel.
pub fn records(seed: u64, start: u64, count: usize) -> Vec<RawRecord> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| record(seed, start + i))
        .collect()
}

/// Train and test splits; test records continue the index sequence after training.
pub fn splits(seed: u64, train: usize, test: usize) -> (Vec<RawRecord>, Vec<RawRecord>) {
    (records(seed, 0, train), records(seed, train as u64, test))
}

/// Writes a full-size synthetic dataset in the CIFAR-10 binary layout.
pub fn write_cifar_dir(dir: &Path, seed: u64) -> Result<()> {
    let (train, test) = splits(seed, TRAIN_RECORDS, TEST_RECORDS);
    cifar::write_dir(dir, &train, &test)
}
