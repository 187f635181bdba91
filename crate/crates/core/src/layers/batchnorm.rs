//! Spatial batch normalization over `(B, H, W)` per channel.
//!
//! TRAIN normalizes with biased batch statistics and folds them into the
//! running estimates as `running = momentum * running + (1 - momentum) * batch`
//! (the running variance uses the unbiased batch estimate). EVAL normalizes
//! with the running estimates.

use super::{join, Layer, Mode, Param, StateVisitor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

struct Cache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Option<Cache<T>>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Param::new(Tensor::ones(&[channels])?).without_decay(),
            beta: Param::new(Tensor::zeros(&[channels])?).without_decay(),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (b, c, h, w) = input.dims4()?;
        if c != self.channels() {
            return Err(Error::mismatch("batchnorm channels", input.shape(), self.gamma.value.shape()));
        }
        Ok((b, c, h * w))
    }
}

/// Iterates the `(B, H*W)` planes of channel `c`.
fn planes<T>(data: &[T], c: usize, channels: usize, area: usize) -> impl Iterator<Item = &[T]> {
    data.chunks_exact(area).skip(c).step_by(channels)
}

impl<T: Element> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, channels, area) = self.check_input(input)?;
        let count = b * area;
        if mode == Mode::Train && count < 2 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm in TRAIN mode needs at least 2 values per channel, input {:?}",
                input.shape()
            )));
        }
        let x = input.data();
        let mut normalized = Tensor::zeros_like(input);
        let mut out = Tensor::zeros_like(input);
        let mut inv_std = vec![0.0; channels];

        for (c, inv) in inv_std.iter_mut().enumerate() {
            let (mean, var) = match mode {
                Mode::Train => {
                    let sum: f64 = planes(x, c, channels, area)
                        .flat_map(|p| p.iter())
                        .map(|v| v.as_f64())
                        .sum();
                    let mean = sum / count as f64;
                    let sq: f64 = planes(x, c, channels, area)
                        .flat_map(|p| p.iter())
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum();
                    let var = sq / count as f64;
                    let unbiased = sq / (count - 1) as f64;
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = T::from_f64_lossy(self.momentum * rm.as_f64() + (1.0 - self.momentum) * mean);
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = T::from_f64_lossy(self.momentum * rv.as_f64() + (1.0 - self.momentum) * unbiased);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean.data()[c].as_f64(),
                    self.running_var.data()[c].as_f64(),
                ),
            };
            let istd = 1.0 / (var + self.epsilon).sqrt();
            *inv = istd;
            let (mean_t, istd_t) = (T::from_f64_lossy(mean), T::from_f64_lossy(istd));
            let (g, bt) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
            for n in 0..b {
                let off = (n * channels + c) * area;
                let src = &x[off..off + area];
                let xh = &mut normalized.data_mut()[off..off + area];
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - mean_t) * istd_t;
                }
                let dst = &mut out.data_mut()[off..off + area];
                for (d, &v) in dst.iter_mut().zip(&normalized.data()[off..off + area]) {
                    *d = g * v + bt;
                }
            }
        }
        self.cache = Some(Cache {
            normalized,
            inv_std,
            mode,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "batchnorm" })?;
        if grad_output.shape() != cache.normalized.shape() {
            return Err(Error::mismatch(
                "batchnorm backward",
                grad_output.shape(),
                cache.normalized.shape(),
            ));
        }
        let (b, channels, area) = self.check_input(grad_output)?;
        let count = (b * area) as f64;
        let g = grad_output.data();
        let xh = cache.normalized.data();
        let mut grad_in = Tensor::zeros_like(grad_output);

        for c in 0..channels {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for (gp, xp) in planes(g, c, channels, area).zip(planes(xh, c, channels, area)) {
                for (&gv, &xv) in gp.iter().zip(xp) {
                    sum_g += gv.as_f64();
                    sum_gx += gv.as_f64() * xv.as_f64();
                }
            }
            let gamma = self.gamma.value.data()[c].as_f64();
            {
                let dg = &mut self.gamma.grad.data_mut()[c];
                *dg = *dg + T::from_f64_lossy(sum_gx);
                let db = &mut self.beta.grad.data_mut()[c];
                *db = *db + T::from_f64_lossy(sum_g);
            }
            let scale = gamma * cache.inv_std[c];
            let (k, mean_g, mean_gx) = match cache.mode {
                Mode::Train => (scale, sum_g / count, sum_gx / count),
                Mode::Eval => (scale, 0.0, 0.0),
            };
            let (k, mean_g, mean_gx) = (
                T::from_f64_lossy(k),
                T::from_f64_lossy(mean_g),
                T::from_f64_lossy(mean_gx),
            );
            for n in 0..b {
                let off = (n * channels + c) * area;
                let dst = &mut grad_in.data_mut()[off..off + area];
                for ((d, &gv), &xv) in dst.iter_mut().zip(&g[off..off + area]).zip(&xh[off..off + area]) {
                    *d = k * (gv - mean_g - xv * mean_gx);
                }
            }
        }
        Ok(grad_in)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        visitor.param(&join(prefix, "gamma"), &mut self.gamma);
        visitor.param(&join(prefix, "beta"), &mut self.beta);
        visitor.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        visitor.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }

    fn kind(&self) -> &'static str {
        "batchnorm"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn channel_stats(t: &Tensor<f64>, c: usize) -> (f64, f64) {
        let (_, channels, h, w) = t.dims4().unwrap();
        let vals: Vec<f64> = planes(t.data(), c, channels, h * w).flatten().copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = Rng::new(3);
        let x = Tensor::<f64>::gaussian(&[4, 3, 5, 5], 2.0, 3.0, &mut rng).unwrap();
        let mut bn = BatchNorm2d::new(3).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let (m, v) = channel_stats(&y, c);
            assert!(m.abs() <= 1e-5);
            assert!((v - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::gaussian(&[8, 2, 4, 4], 0.0, 1.0, &mut rng).unwrap();
        let mut pre = BatchNorm2d::new(2).unwrap();
        let z = pre.forward(&x, Mode::Train).unwrap();
        let mut bn = BatchNorm2d::new(2).unwrap();
        let y = bn.forward(&z, Mode::Train).unwrap();
        assert!(y.max_abs_diff(&z).unwrap() <= 1e-5);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = Rng::new(6);
        let x = Tensor::<f32>::gaussian(&[2, 2, 3, 3], 0.0, 1.0, &mut rng).unwrap();
        let mut bn = BatchNorm2d::new(2).unwrap();
        bn.gamma.value = Tensor::zeros(&[2]).unwrap();
        bn.beta.value = Tensor::from_vec(&[2], vec![0.25, -1.5]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let c = (i / 9) % 2;
            assert_eq!(*v, [0.25, -1.5][c]);
        }
    }

    #[test]
    fn running_statistics_update() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let mut bn = BatchNorm2d::new(1).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        let expected = (1.0 - 0.2) / (1.1f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn single_value_rejected_in_train() {
        let mut bn = BatchNorm2d::<f32>::new(2).unwrap();
        let x = Tensor::zeros(&[1, 2, 1, 1]).unwrap();
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }
}
