//! A stack of weighted units is its input plus a sum of scaled branch outputs.
//! Compares the network's own forward pass against an independent f64 sum for
//! every prefix of every block, in f32 and in f64.
//!
//!     cargo run --release --example telescoping [-- n]

use wrsn::layers::{Layer, Mode};
use wrsn::residual::{build_network, NetworkConfig, Variant};
use wrsn::tensor::{Element, Rng, Tensor};
use wrsn::verify::{telescope_oracle, warm_batchnorm};

fn compare<T: Element>(n: usize) -> wrsn::Result<()> {
    let mut rng = Rng::new(7);
    let mut net = build_network::<T>(&NetworkConfig::new(n, Variant::Weighted))?;
    for w in net.residual_weights_mut() {
        w.value = rng.uniform() - 0.5;
    }
    let batch = Tensor::<T>::gaussian(&[8, 3, 32, 32], 0.0, 1.0, &mut rng)?;
    warm_batchnorm(&mut net, &batch, 3)?;

    // highway input of each block
    let mut h = net.stem.forward(&batch, Mode::Eval)?;
    for b in 0..net.blocks.len() {
        if b > 0 {
            h = net.downsamples[b - 1].forward(&h, Mode::Eval)?;
        }
        let mut sequential = h.clone();
        for k in 1..=n {
            sequential = net.blocks[b][k - 1].forward(&sequential, Mode::Eval)?;
            let oracle = telescope_oracle(&mut net.blocks[b][..k], &h)?;
            let diff = sequential.cast::<f64>().max_abs_diff(&oracle)?;
            let peak = sequential.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
            println!("block {} k={k:<2} max |forward - oracle| = {diff:.2e}  max |x| = {peak:.2}", b + 1);
        }
        h = sequential;
    }
    Ok(())
}

fn main() -> wrsn::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    println!("f32");
    compare::<f32>(n)?;
    println!("f64");
    compare::<f64>(n)
}
