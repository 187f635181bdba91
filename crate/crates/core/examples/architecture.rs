//! Layer counts and per-block feature-map shapes for the depths used in the tests.
//!
//!     cargo run --release --example architecture

use wrsn::layers::{Layer, Mode};
use wrsn::residual::{build_network, NetworkConfig, Variant};
use wrsn::tensor::{Rng, Tensor};

fn main() -> wrsn::Result<()> {
    let x = Tensor::<f32>::gaussian(&[2, 3, 32, 32], 0.0, 1.0, &mut Rng::new(0))?;
    println!("{:>3} {:>7} {:>6}  block outputs (N, C, H, W)", "n", "layers", "units");
    for n in [1, 3, 9, 18] {
        let cfg = NetworkConfig::new(n, Variant::Weighted);
        let mut net = build_network::<f32>(&cfg)?;
        let logits = net.forward(&x, Mode::Eval)?;
        assert_eq!(logits.shape(), &[2, 10]);
        println!(
            "{n:>3} {:>7} {:>6}  {:?}",
            net.layer_count(),
            net.unit_count(),
            net.block_shapes()
        );
    }
    let deepest = NetworkConfig::new(198, Variant::Weighted);
    println!("n=198 would have {} layers", deepest.expected_layers());
    Ok(())
}
