//! The finite-difference suite over every layer, both unit variants and a small network.

use super::gradcheck::{check_layer, check_softmax_xent, CheckOptions, GradCheckReport};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Dropout, GlobalAvgPool, Layer, Linear, Mode, Relu};
use crate::residual::{build_network, residual_branch, Downsample, NetworkConfig, OriginalUnit, Variant, WeightedUnit};
use crate::tensor::{Rng, Tensor};

/// Names accepted by [`gradient_suite`]'s filter.
pub const SUITE_LAYERS: &[&str] = &[
    "conv",
    "batchnorm",
    "relu",
    "dropout",
    "pool",
    "fc",
    "softmax_xent",
    "weighted_unit",
    "original_unit",
    "downsample",
    "network",
];

fn gaussian(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    Tensor::gaussian(shape, 0.0, 1.0, rng)
}

fn randomize_bn(bn: &mut BatchNorm2d<f64>, rng: &mut Rng) -> Result<()> {
    let c = bn.channels();
    bn.gamma.value = Tensor::gaussian(&[c], 1.0, 0.3, rng)?;
    bn.beta.value = Tensor::gaussian(&[c], 0.0, 0.3, rng)?;
    Ok(())
}

fn check(
    out: &mut Vec<GradCheckReport>,
    name: String,
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    opts: CheckOptions,
    rng: &mut Rng,
) -> Result<()> {
    out.extend(check_layer(&name, layer, x, mode, opts, rng)?);
    Ok(())
}

fn run_one(layer: &str, opts: CheckOptions, rng: &mut Rng, out: &mut Vec<GradCheckReport>) -> Result<()> {
    match layer {
        "conv" => {
            // (input shape, out channels, kernel, stride, pad)
            let cases: [([usize; 4], usize, usize, usize, usize); 3] = [
                ([2, 3, 5, 5], 4, 3, 1, 1),
                ([1, 2, 6, 6], 3, 3, 2, 1),
                ([3, 4, 4, 4], 2, 1, 1, 0),
            ];
            for (i, (shape, cout, k, s, p)) in cases.into_iter().enumerate() {
                let mut conv = Conv2d::new(shape[1], cout, k, s, p, rng)?;
                let x = gaussian(&shape, rng)?;
                check(out, format!("conv[{i}]"), &mut conv, &x, Mode::Train, opts, rng)?;
            }
        }
        "batchnorm" => {
            for (i, shape) in [[4, 3, 3, 3], [5, 2, 4, 4], [4, 1, 2, 3]].iter().enumerate() {
                let mut bn = BatchNorm2d::new(shape[1])?;
                randomize_bn(&mut bn, rng)?;
                let x = Tensor::gaussian(shape, 0.5, 2.0, rng)?;
                check(out, format!("batchnorm[{i}]"), &mut bn, &x, Mode::Train, opts, rng)?;
            }
            let mut bn = BatchNorm2d::new(3)?;
            randomize_bn(&mut bn, rng)?;
            bn.running_mean = Tensor::gaussian(&[3], 0.0, 0.5, rng)?;
            bn.running_var = Tensor::gaussian(&[3], 0.0, 0.5, rng)?.map(|v: f64| 0.5 + v.abs());
            let x = gaussian(&[2, 3, 3, 3], rng)?;
            check(out, "batchnorm_eval".into(), &mut bn, &x, Mode::Eval, opts, rng)?;
        }
        "relu" => {
            for (i, shape) in [[2, 3, 4, 4], [1, 1, 5, 5], [3, 2, 2, 2]].iter().enumerate() {
                let x = gaussian(shape, rng)?;
                check(out, format!("relu[{i}]"), &mut Relu::new(), &x, Mode::Train, opts, rng)?;
            }
        }
        "dropout" => {
            let x = gaussian(&[2, 3, 4, 4], rng)?;
            let mut d = Dropout::new(0.3, Rng::new(17))?;
            check(out, "dropout_train".into(), &mut d, &x, Mode::Train, opts, rng)?;
            check(out, "dropout_eval".into(), &mut d, &x, Mode::Eval, opts, rng)?;
            let mut off = Dropout::new(0.0, Rng::new(18))?;
            check(out, "dropout_off".into(), &mut off, &x, Mode::Train, opts, rng)?;
        }
        "pool" => {
            for (i, shape) in [[2, 3, 4, 4], [1, 5, 3, 2], [3, 2, 1, 1]].iter().enumerate() {
                let x = gaussian(shape, rng)?;
                check(out, format!("pool[{i}]"), &mut GlobalAvgPool::new(), &x, Mode::Train, opts, rng)?;
            }
        }
        "fc" => {
            for (i, (b, c, k)) in [(3, 5, 4), (2, 8, 10), (1, 3, 2)].into_iter().enumerate() {
                let w = gaussian(&[k, c], rng)?;
                let bias = gaussian(&[k], rng)?;
                let mut fc = Linear::from_parts(w, bias)?;
                let x = gaussian(&[b, c], rng)?;
                check(out, format!("fc[{i}]"), &mut fc, &x, Mode::Train, opts, rng)?;
            }
        }
        "softmax_xent" => {
            for (b, k) in [(4, 10), (2, 3), (1, 5)] {
                let logits = Tensor::gaussian(&[b, k], 0.0, 2.0, rng)?;
                let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
                let mut r = check_softmax_xent(&logits, &labels, opts, rng)?;
                r.name = format!("softmax_xent[{b}x{k}]");
                out.push(r);
            }
        }
        "weighted_unit" => {
            for (i, (lambda, ratio)) in [(0.37, 0.0), (-0.6, 0.0), (0.45, 0.2), (0.0, 0.0)].into_iter().enumerate() {
                let dropout = Some((ratio, Rng::new(40 + i as u64)));
                let mut u = WeightedUnit::new(residual_branch(4, true, dropout, rng)?);
                u.lambda.value = lambda;
                let x = gaussian(&[2, 4, 6, 6], rng)?;
                check(out, format!("weighted_unit[{i}]"), &mut u, &x, Mode::Train, opts, rng)?;
            }
        }
        "original_unit" => {
            for (i, shape) in [[2, 3, 6, 6], [3, 2, 4, 4]].iter().enumerate() {
                let mut u = OriginalUnit::new(residual_branch(shape[1], false, None, rng)?);
                let x = gaussian(shape, rng)?;
                check(out, format!("original_unit[{i}]"), &mut u, &x, Mode::Train, opts, rng)?;
            }
        }
        "downsample" => {
            let mut d = Downsample::new(3, rng)?;
            let x = gaussian(&[2, 3, 6, 6], rng)?;
            check(out, "downsample".into(), &mut d, &x, Mode::Train, opts, rng)?;
        }
        "network" => {
            for variant in [Variant::Weighted, Variant::Original] {
                let cfg = NetworkConfig {
                    base_width: 4,
                    seed: rng.next_u64(),
                    ..NetworkConfig::new(1, variant)
                };
                let mut net = build_network::<f64>(&cfg)?;
                for w in net.residual_weights_mut() {
                    w.value = rng.uniform() - 0.5;
                }
                let x = gaussian(&[4, 3, 16, 16], rng)?;
                check(out, format!("network_{}", variant.name()), &mut net, &x, Mode::Train, opts, rng)?;
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown layer {other:?}; expected one of {}",
                SUITE_LAYERS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Runs every check, or only `layer`'s, from generator `seed`.
pub fn gradient_suite(seed: u64, layer: Option<&str>, opts: CheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for (i, &name) in SUITE_LAYERS.iter().enumerate() {
        if layer.is_none_or(|l| l == name) {
            let mut rng = Rng::derive(seed, i as u64);
            run_one(name, opts, &mut rng, &mut out)?;
        }
    }
    if let Some(l) = layer {
        if !SUITE_LAYERS.contains(&l) {
            run_one(l, opts, &mut Rng::new(seed), &mut out)?;
        }
    }
    Ok(out)
}
