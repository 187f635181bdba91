use crate::error::{Error, Result};
use crate::layers::{Layer, Mode, Param, SoftmaxCrossEntropy, StateVisitor};
use crate::residual::{Network, Unit};
use crate::tensor::{Element, Tensor};

/// `x + sum_j lambda_j * branch_j(x_j)` over consecutive weighted units in EVAL mode.
///
/// The running sum is carried in `f64` and is itself the highway value `x_j`
/// fed, rounded to `T`, into the next branch.
pub fn telescope_oracle<T: Element>(units: &mut [Unit<T>], x: &Tensor<T>) -> Result<Tensor<f64>> {
    let mut sum: Tensor<f64> = x.cast();
    for unit in units {
        let Unit::Weighted(u) = unit else {
            return Err(Error::InvalidArgument("telescoping needs weighted units".into()));
        };
        let r: Tensor<f64> = u.branch.forward(&sum.cast::<T>(), Mode::Eval)?.cast();
        sum.axpy(u.lambda.value, &r)?;
    }
    Ok(sum)
}

/// The network with every residual unit removed: stem, downsamples, pooling and classifier, EVAL mode.
pub fn skeleton_forward<T: Element>(net: &mut Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut h = net.stem.forward(x, Mode::Eval)?;
    for d in &mut net.downsamples {
        h = d.forward(&h, Mode::Eval)?;
    }
    let pooled = Layer::<T>::forward(&mut net.pool, &h, Mode::Eval)?;
    net.fc.forward(&pooled, Mode::Eval)
}

/// Runs `passes` TRAIN-mode forwards so batch-norm running statistics track `x`.
pub fn warm_batchnorm<T: Element>(net: &mut Network<T>, x: &Tensor<T>, passes: usize) -> Result<()> {
    for _ in 0..passes {
        net.forward(x, Mode::Train)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitGrad {
    pub unit: usize,
    /// Largest `|dL/dtheta|` over every branch parameter.
    pub branch_max_abs: f64,
    pub lambda_grad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitGradReport {
    pub units: Vec<UnitGrad>,
    pub max_branch_grad: f64,
    pub max_lambda_grad: f64,
    pub passed: bool,
}

struct MaxGrad(f64);

impl<T: Element> StateVisitor<T> for MaxGrad {
    fn param(&mut self, _: &str, p: &mut Param<T>) {
        self.0 = self.0.max(p.grad.max_abs());
    }
}

/// Gradients of the cross-entropy at `(x, labels)` for a weighted network whose residual weights are all zero.
///
/// Passes when every branch gradient is exactly zero and some residual-weight
/// gradient exceeds `1e-8` in magnitude.
pub fn init_gradient_structure<T: Element>(
    net: &mut Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<InitGradReport> {
    if net.unit_count() != net.residual_weights().len() {
        return Err(Error::InvalidArgument("gradient structure needs a weighted network".into()));
    }
    if net.lambda_values().iter().any(|&l| l != 0.0) {
        return Err(Error::InvalidArgument("gradient structure needs every residual weight at zero".into()));
    }
    net.zero_grad();
    let logits = net.forward(x, Mode::Train)?;
    let mut xent = SoftmaxCrossEntropy::new();
    xent.forward(&logits, labels)?;
    net.backward(&xent.backward()?)?;

    let mut units = Vec::new();
    for unit in net.blocks.iter_mut().flatten() {
        let mut max = MaxGrad(0.0);
        unit.branch_mut().visit("", &mut max);
        units.push(UnitGrad {
            unit: units.len(),
            branch_max_abs: max.0,
            lambda_grad: unit.lambda().map_or(0.0, |w| w.grad),
        });
    }
    let max_branch_grad = units.iter().map(|u| u.branch_max_abs).fold(0.0, f64::max);
    let max_lambda_grad = units.iter().map(|u| u.lambda_grad.abs()).fold(0.0, f64::max);
    Ok(InitGradReport {
        passed: max_branch_grad == 0.0 && max_lambda_grad > 1e-8,
        units,
        max_branch_grad,
        max_lambda_grad,
    })
}
