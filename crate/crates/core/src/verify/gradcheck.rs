//! Central-difference gradient checks in `f64`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::{Layer, Mode, Param, SoftmaxCrossEntropy, StateVisitor};
use crate::residual::ResidualWeight;
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const THRESHOLD: f64 = 1e-4;
pub const MIN_PROBES: usize = 20;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of `f` at `x` for each coordinate in `coords`.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
    coords: &[usize],
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub probes: usize,
    /// Coordinates skipped because a ReLU kink lay within every tried step.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub const CSV_HEADER: &'static str = "name,probes,kinks,max_rel_error,threshold,passed";

    fn new(name: String, pairs: &[(f64, f64)], kinks: usize, threshold: f64) -> Self {
        let max_rel_error = pairs
            .iter()
            .map(|&(a, n)| relative_error(a, n))
            .fold(0.0, f64::max);
        GradCheckReport {
            name,
            probes: pairs.len(),
            kinks,
            max_rel_error,
            threshold,
            passed: !pairs.is_empty()
                && max_rel_error <= threshold
                && pairs.iter().all(|(a, n)| a.is_finite() && n.is_finite()),
        }
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{}",
            self.name, self.probes, self.kinks, self.max_rel_error, self.threshold, self.passed
        )
    }
}

pub fn reports_csv(reports: &[GradCheckReport]) -> String {
    let mut out = format!("{}\n", GradCheckReport::CSV_HEADER);
    for r in reports {
        let _ = writeln!(out, "{}", r.to_csv_row());
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub probes: usize,
    pub step: f64,
    pub threshold: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            probes: MIN_PROBES,
            step: DEFAULT_STEP,
            threshold: THRESHOLD,
        }
    }
}

/// Step sizes tried per coordinate, each a quarter of the last.
pub const STEP_RETRIES: usize = 3;
/// Central differences at `h` and `h / 2` further apart than this mark a kink within `h`.
pub const KINK_TOLERANCE: f64 = 1e-6;

/// Derivative of `f(delta)` at `delta = 0` that steps around ReLU kinks.
///
/// Accepts the central difference once the estimates at `h` and `h / 2` agree,
/// quartering `h` otherwise. If no step is kink-free on both sides, falls back
/// to an extrapolated one-sided difference from a side that is. `None` when
/// every estimate is inconsistent.
pub fn kink_safe_derivative(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<Option<f64>> {
    let f0 = f(0.0)?;
    let mut step = h;
    for _ in 0..STEP_RETRIES {
        let (p1, m1, p2, m2) = (f(step)?, f(-step)?, f(step / 2.0)?, f(-step / 2.0)?);
        let coarse = (p1 - m1) / (2.0 * step);
        let fine = (p2 - m2) / step;
        if relative_error(coarse, fine) <= KINK_TOLERANCE {
            return Ok(Some(fine));
        }
        for dir in [1.0, -1.0] {
            // second-order one-sided estimates at step and step / 2
            let (q1, q2) = (f(dir * step / 4.0)?, f(dir * step / 8.0)?);
            let (s1, s2) = (dir * step / 2.0, dir * step / 4.0);
            let far = if dir > 0.0 { p2 } else { m2 };
            let wide = (4.0 * q1 - far - 3.0 * f0) / s1;
            let narrow = (4.0 * q2 - q1 - 3.0 * f0) / s2;
            // rounding in f, amplified by the narrowest offset
            let noise = 8.0 * f64::EPSILON * f0.abs().max(1.0) / s2.abs();
            if relative_error(wide, narrow) <= KINK_TOLERANCE && noise <= 1e-2 * THRESHOLD * narrow.abs() {
                return Ok(Some(narrow));
            }
        }
        step /= 4.0;
    }
    Ok(None)
}

/// Up to `probes` distinct coordinates of `0..len`; every coordinate when `len <= probes`.
pub fn probe_coords(len: usize, probes: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len > probes {
        rng.shuffle(&mut all);
        all.truncate(probes);
        all.sort_unstable();
    }
    all
}

enum Slot<'a> {
    Param(&'a mut Param<f64>),
    Lambda(&'a mut ResidualWeight),
}

struct Each<F>(F);

impl<F: FnMut(&str, Slot)> StateVisitor<f64> for Each<F> {
    fn param(&mut self, name: &str, p: &mut Param<f64>) {
        (self.0)(name, Slot::Param(p))
    }
    fn residual_weight(&mut self, name: &str, w: &mut ResidualWeight) {
        (self.0)(name, Slot::Lambda(w))
    }
}

struct Rngs {
    saved: Vec<Rng>,
    restore: bool,
    at: usize,
}

impl StateVisitor<f64> for Rngs {
    fn param(&mut self, _: &str, _: &mut Param<f64>) {}
    fn rng(&mut self, _: &str, rng: &mut Rng) {
        if self.restore {
            *rng = self.saved[self.at].clone();
            self.at += 1;
        } else {
            self.saved.push(rng.clone());
        }
    }
}

/// Scalar probe `sum(w * layer(x))` with every generator reset to its starting state.
struct Probe<'a> {
    layer: &'a mut dyn Layer<f64>,
    mode: Mode,
    weights: Tensor<f64>,
    rngs: Vec<Rng>,
}

impl Probe<'_> {
    fn reset_rngs(&mut self) {
        let mut v = Rngs {
            saved: std::mem::take(&mut self.rngs),
            restore: true,
            at: 0,
        };
        self.layer.visit("", &mut v);
        self.rngs = v.saved;
    }

    fn value(&mut self, x: &Tensor<f64>) -> Result<f64> {
        self.reset_rngs();
        self.layer.forward(x, self.mode)?.dot(&self.weights)
    }

    fn set(&mut self, target: &str, index: usize, value: f64) {
        self.layer.visit(
            "",
            &mut Each(|name: &str, slot: Slot| {
                if name == target {
                    match slot {
                        Slot::Param(p) => p.value.data_mut()[index] = value,
                        Slot::Lambda(w) => w.value = value,
                    }
                }
            }),
        );
    }
}

/// Visits coordinates of `0..len` in random order until `opts.probes` of them
/// yield an (analytic, numeric) pair; returns the pairs and the number of kinked coordinates skipped.
fn sample_pairs(
    len: usize,
    opts: CheckOptions,
    rng: &mut Rng,
    mut pair: impl FnMut(usize) -> Result<Option<(f64, f64)>>,
) -> Result<(Vec<(f64, f64)>, usize)> {
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    let mut pairs = Vec::new();
    let mut kinks = 0;
    for i in order {
        if pairs.len() == opts.probes {
            break;
        }
        match pair(i)? {
            Some(p) => pairs.push(p),
            None => kinks += 1,
        }
    }
    Ok((pairs, kinks))
}

/// Checks the input gradient and every parameter and residual-weight gradient of
/// `layer` at `x`, probing the scalar `sum(w * layer(x))` for random weights `w`.
pub fn check_layer(
    name: &str,
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    opts: CheckOptions,
    rng: &mut Rng,
) -> Result<Vec<GradCheckReport>> {
    let mut saved = Rngs {
        saved: Vec::new(),
        restore: false,
        at: 0,
    };
    layer.visit("", &mut saved);

    // analytic pass
    let mut probe = Probe {
        layer,
        mode,
        weights: Tensor::zeros(&[1])?,
        rngs: saved.saved,
    };
    probe.reset_rngs();
    let out = probe.layer.forward(x, mode)?;
    probe.weights = Tensor::gaussian(out.shape(), 0.0, 1.0, rng)?;
    probe.layer.visit(
        "",
        &mut Each(|_: &str, slot: Slot| match slot {
            Slot::Param(p) => p.zero_grad(),
            Slot::Lambda(w) => w.grad = 0.0,
        }),
    );
    let grad_x = probe.layer.backward(&probe.weights)?;
    let mut targets: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    probe.layer.visit(
        "",
        &mut Each(|n: &str, slot: Slot| match slot {
            Slot::Param(p) => targets.push((n.to_string(), p.value.data().to_vec(), p.grad.data().to_vec())),
            Slot::Lambda(w) => targets.push((n.to_string(), vec![w.value], vec![w.grad])),
        }),
    );

    let mut reports = Vec::new();
    let mut xp = x.clone();
    let (pairs, kinks) = sample_pairs(x.len(), opts, rng, |i| {
        let d = kink_safe_derivative(
            |dv| {
                xp.data_mut()[i] = x.data()[i] + dv;
                let v = probe.value(&xp);
                xp.data_mut()[i] = x.data()[i];
                v
            },
            opts.step,
        )?;
        Ok(d.map(|n| (grad_x.data()[i], n)))
    })?;
    reports.push(GradCheckReport::new(format!("{name}.input"), &pairs, kinks, opts.threshold));

    for (pname, values, grads) in targets {
        let (pairs, kinks) = sample_pairs(values.len(), opts, rng, |i| {
            let d = kink_safe_derivative(
                |dv| {
                    probe.set(&pname, i, values[i] + dv);
                    let v = probe.value(x);
                    probe.set(&pname, i, values[i]);
                    v
                },
                opts.step,
            )?;
            Ok(d.map(|n| (grads[i], n)))
        })?;
        let label = if pname.is_empty() {
            name.to_string()
        } else {
            format!("{name}.{pname}")
        };
        reports.push(GradCheckReport::new(label, &pairs, kinks, opts.threshold));
    }
    Ok(reports)
}

/// Checks the logit gradient of the mean softmax cross-entropy.
pub fn check_softmax_xent(
    logits: &Tensor<f64>,
    labels: &[usize],
    opts: CheckOptions,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let mut xent = SoftmaxCrossEntropy::new();
    xent.forward(logits, labels)?;
    let grad: Tensor<f64> = xent.backward()?;
    let coords = probe_coords(logits.len(), opts.probes, rng);
    let shape = logits.shape().to_vec();
    let numeric = finite_diff_gradient(
        |v| {
            let t = Tensor::from_vec(&shape, v.to_vec()).expect("same shape");
            SoftmaxCrossEntropy::new().forward(&t, labels).unwrap_or(f64::NAN)
        },
        logits.data(),
        opts.step,
        &coords,
    );
    let pairs: Vec<(f64, f64)> = coords.iter().zip(&numeric).map(|(&i, &n)| (grad.data()[i], n)).collect();
    if pairs.iter().any(|(_, n)| n.is_nan()) {
        return Err(Error::InvalidArgument("softmax cross-entropy probe failed".into()));
    }
    Ok(GradCheckReport::new("softmax_xent.logits".into(), &pairs, 0, opts.threshold))
}
