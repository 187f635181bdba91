//! Momentum SGD with weight decay, projected SGD for residual weights, and
//! the stepwise learning-rate schedule.
//!
//! Both parameter kinds use the same update
//!
//! ```text
//! v <- momentum * v - lr * (grad + decay * value)
//! value <- value + v
//! ```
//!
//! and residual weights are then clamped into their interval. The velocity
//! is not touched by the clamp.

use crate::error::{Error, Result};
use crate::layers::{Layer, Param, StateVisitor};
use crate::residual::ResidualWeight;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub lambda_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(iteration, multiplier)` pairs; both rates are multiplied from that iteration on.
    pub schedule: Vec<(u64, f64)>,
    pub total_iterations: u64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.1,
            lambda_lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
            schedule: vec![(32_000, 0.1), (48_000, 0.1)],
            total_iterations: 64_000,
            batch_size: 128,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.lambda_lr, self.momentum, self.weight_decay];
        if positive.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "learning rates, momentum and weight decay must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument(
                "schedule iterations must be strictly increasing".into(),
            ));
        }
        if self.schedule.iter().any(|&(_, m)| m.is_nan() || m <= 0.0) {
            return Err(Error::InvalidArgument("schedule multipliers must be positive".into()));
        }
        Ok(())
    }

    /// Product of the schedule multipliers whose breakpoint is at or before `iteration`.
    pub fn multiplier_at(&self, iteration: u64) -> f64 {
        self.schedule
            .iter()
            .filter(|&&(at, _)| iteration >= at)
            .map(|&(_, m)| m)
            .product()
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        self.base_lr * self.multiplier_at(iteration)
    }

    pub fn lambda_lr_at(&self, iteration: u64) -> f64 {
        self.lambda_lr * self.multiplier_at(iteration)
    }

    /// The default `{8k, 16k, 32k, 64k}` snapshot grid of a 64k-iteration run,
    /// rescaled to `total_iterations`.
    pub fn snapshot_grid(&self) -> Vec<u64> {
        let mut grid: Vec<u64> = [8_000u64, 16_000, 32_000, 64_000]
            .iter()
            .map(|&at| ((at as f64 / 64_000.0) * self.total_iterations as f64).round() as u64)
            .filter(|&at| at > 0)
            .collect();
        grid.dedup();
        grid
    }
}

fn check_finite<T: Element>(name: &str, grad: &Tensor<T>) -> Result<()> {
    if grad.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient {
            param: name.to_string(),
        })
    }
}

/// One momentum step on `param`; its gradient is zeroed afterwards.
pub fn sgd_step<T: Element>(
    param: &mut Param<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_finite("param", &param.grad)?;
    apply_sgd(param, lr, momentum, weight_decay);
    Ok(())
}

fn apply_sgd<T: Element>(param: &mut Param<T>, lr: f64, momentum: f64, weight_decay: f64) {
    let lr = T::from_f64_lossy(lr * param.lr_mult);
    let decay = T::from_f64_lossy(weight_decay * param.decay_mult);
    let momentum = T::from_f64_lossy(momentum);
    let Param {
        value,
        grad,
        velocity,
        ..
    } = param;
    for ((w, g), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data_mut().iter_mut())
        .zip(velocity.data_mut().iter_mut())
    {
        *v = momentum * *v - lr * (*g + decay * *w);
        *w = *w + *v;
        *g = T::zero();
    }
}

/// One momentum step on a residual weight followed by projection onto its interval.
pub fn projected_step(
    weight: &mut ResidualWeight,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !weight.grad.is_finite() {
        return Err(Error::NonFiniteGradient {
            param: "lambda".into(),
        });
    }
    apply_projected(weight, lr, momentum, weight_decay);
    Ok(())
}

fn apply_projected(weight: &mut ResidualWeight, lr: f64, momentum: f64, weight_decay: f64) {
    let lr = lr * weight.lr_mult;
    weight.velocity = momentum * weight.velocity - lr * (weight.grad + weight_decay * weight.value);
    weight.value += weight.velocity;
    weight.project();
    weight.grad = 0.0;
}

/// Applies one optimizer step to every parameter of `model` at `iteration`.
///
/// All gradients are checked first; a non-finite one aborts the whole step
/// with nothing modified.
pub fn step<T: Element>(model: &mut dyn Layer<T>, config: &OptimizerConfig, iteration: u64) -> Result<()> {
    struct Check(Option<String>);
    impl<T: Element> StateVisitor<T> for Check {
        fn param(&mut self, name: &str, p: &mut Param<T>) {
            if self.0.is_none() && !p.grad.all_finite() {
                self.0 = Some(name.to_string());
            }
        }
        fn residual_weight(&mut self, name: &str, w: &mut ResidualWeight) {
            if self.0.is_none() && !w.grad.is_finite() {
                self.0 = Some(name.to_string());
            }
        }
    }
    let mut check = Check(None);
    model.visit("", &mut check);
    if let Some(param) = check.0 {
        return Err(Error::NonFiniteGradient { param });
    }

    struct Update<'a> {
        config: &'a OptimizerConfig,
        lr: f64,
        lambda_lr: f64,
    }
    impl<T: Element> StateVisitor<T> for Update<'_> {
        fn param(&mut self, _: &str, p: &mut Param<T>) {
            apply_sgd(p, self.lr, self.config.momentum, self.config.weight_decay);
        }
        fn residual_weight(&mut self, _: &str, w: &mut ResidualWeight) {
            apply_projected(w, self.lambda_lr, self.config.momentum, self.config.weight_decay);
        }
    }
    model.visit(
        "",
        &mut Update {
            config,
            lr: config.lr_at(iteration),
            lambda_lr: config.lambda_lr_at(iteration),
        },
    );
    Ok(())
}

/// `weight_decay * (sum_theta decay_mult * |theta|^2 / 2 + |lambda|^2 / 2)`, for logging.
pub fn regularizer_value<T: Element>(model: &mut dyn Layer<T>, weight_decay: f64) -> f64 {
    struct Norm(f64);
    impl<T: Element> StateVisitor<T> for Norm {
        fn param(&mut self, _: &str, p: &mut Param<T>) {
            self.0 += p.decay_mult * 0.5 * p.value.sum_sq();
        }
        fn residual_weight(&mut self, _: &str, w: &mut ResidualWeight) {
            self.0 += 0.5 * w.value * w.value;
        }
    }
    let mut norm = Norm(0.0);
    model.visit("", &mut norm);
    weight_decay * norm.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> Param<f64> {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![value]).unwrap());
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn schedule_breakpoints() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.lr_at(0), 0.1);
        assert!((cfg.lr_at(31_999) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(32_000) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(48_000) - 0.001).abs() < 1e-15);
        assert!((cfg.lambda_lr_at(0) - 0.001).abs() < 1e-18);
        assert!((cfg.lambda_lr_at(32_000) - 0.0001).abs() < 1e-18);
        assert!((cfg.lambda_lr_at(48_000) - 0.00001).abs() < 1e-18);
    }

    #[test]
    fn schedule_validation() {
        let mut cfg = OptimizerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.schedule = vec![(10, 0.1), (10, 0.1)];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn snapshot_grid_scales() {
        assert_eq!(OptimizerConfig::default().snapshot_grid(), vec![8_000, 16_000, 32_000, 64_000]);
        let short = OptimizerConfig {
            total_iterations: 2_000,
            ..Default::default()
        };
        assert_eq!(short.snapshot_grid(), vec![250, 500, 1_000, 2_000]);
    }

    #[test]
    fn zero_gradient_no_decay_is_stationary() {
        let mut p = scalar_param(0.7, 0.0);
        sgd_step(&mut p, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn plain_gradient_descent() {
        let mut p = scalar_param(1.0, 0.5);
        sgd_step(&mut p, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.value.data()[0], 1.0 - 0.1 * 0.5);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn momentum_second_displacement() {
        // v1 = -lr g, v2 = m v1 - lr g = -lr g (1 + m)
        let (lr, g, m) = (0.1, 2.0, 0.9);
        let mut p = scalar_param(0.0, g);
        sgd_step(&mut p, lr, m, 0.0).unwrap();
        let after_one = p.value.data()[0];
        p.grad.data_mut()[0] = g;
        sgd_step(&mut p, lr, m, 0.0).unwrap();
        let second = p.value.data()[0] - after_one;
        assert!((second - (-lr * g * 1.9)).abs() < 1e-12);
    }

    #[test]
    fn decay_shrinks_monotonically() {
        let mut p = scalar_param(0.8, 0.0);
        let mut last = 0.8f64;
        for _ in 0..50 {
            sgd_step(&mut p, 0.1, 0.9, 0.01).unwrap();
            let v = p.value.data()[0].abs();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_param(1.0, f64::NAN);
        assert!(matches!(sgd_step(&mut p, 0.1, 0.9, 0.0), Err(Error::NonFiniteGradient { .. })));
        assert_eq!(p.value.data()[0], 1.0);
        let mut w = ResidualWeight::new();
        w.grad = f64::INFINITY;
        assert!(projected_step(&mut w, 0.1, 0.9, 0.0).is_err());
        assert_eq!(w.value, 0.0);
    }

    #[test]
    fn projection_cases() {
        // lr 1, momentum 0, decay 0: the update lands at value - grad
        for (start, grad, expected) in [(0.5, -0.2, 0.7), (0.5, -1.1, 1.0), (0.2, 2.5, -1.0)] {
            let mut w = ResidualWeight::new();
            w.value = start;
            w.grad = grad;
            projected_step(&mut w, 1.0, 0.0, 0.0).unwrap();
            assert!((w.value - expected).abs() < 1e-12, "{start} {grad} -> {}", w.value);
        }
    }

    #[test]
    fn velocity_survives_projection() {
        let mut w = ResidualWeight::new();
        w.value = 0.9;
        w.grad = -3.0;
        projected_step(&mut w, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w.value, 1.0);
        assert!((w.velocity - 0.3).abs() < 1e-12);
    }
}
