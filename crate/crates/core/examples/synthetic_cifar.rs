//! Writes a full-size synthetic dataset in the CIFAR-10 binary layout, loads it
//! back through the regular loader and shows one augmented batch.
//!
//!     cargo run --release --example synthetic_cifar -- <out_dir> [seed]

use std::path::PathBuf;

use wrsn::data::{self, synthetic, CropParams};
use wrsn::tensor::{streams, Rng};

fn main() -> wrsn::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/synthetic-cifar".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    synthetic::write_cifar_dir(&dir, seed)?;
    let ds = data::load_cifar10(&dir)?;
    println!("{}: {} train, {} test", dir.display(), ds.train.len(), ds.test.len());
    println!("mean {:?}\nstd  {:?}", ds.stats.mean, ds.stats.std);

    let mut counts = [0usize; 10];
    for s in &ds.train {
        counts[s.label] += 1;
    }
    println!("train labels per class {counts:?}");

    let mut rng = Rng::derive(seed, streams::AUGMENT);
    for _ in 0..4 {
        println!("crop {:?}", CropParams::sample(&mut rng));
    }
    let (x, labels) = data::assemble::<f32>(&ds.train, &[0, 1, 2, 3], Some((&mut rng, ds.pad_values())))?;
    println!("batch {:?} labels {labels:?}", x.shape());
    Ok(())
}
