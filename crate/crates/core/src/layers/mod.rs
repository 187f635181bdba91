//! Layers with cached forward state and explicit backward passes.
//!
//! Every layer follows the same contract: `forward` caches whatever the
//! matching `backward` needs, `backward` returns the input gradient and adds
//! parameter gradients into the layers' [`Param`] accumulators.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod loss;
mod pool;

pub use activation::Relu;
pub(crate) use activation::{relu, relu_backward};
pub use batchnorm::{BatchNorm2d, BN_EPSILON, BN_MOMENTUM};
pub use conv::Conv2d;
pub use dropout::{dropout, Dropout};
pub use linear::Linear;
pub use loss::SoftmaxCrossEntropy;
pub use pool::GlobalAvgPool;

use crate::error::Result;
use crate::residual::ResidualWeight;
use crate::tensor::{Element, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
    pub lr_mult: f64,
    pub decay_mult: f64,
}

impl<T: Element> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param {
            grad: Tensor::zeros_like(&value),
            velocity: Tensor::zeros_like(&value),
            value,
            lr_mult: 1.0,
            decay_mult: 1.0,
        }
    }

    pub fn without_decay(mut self) -> Self {
        self.decay_mult = 0.0;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.set_zero();
    }
}

/// Draws `param.value` from `N(0, sqrt(2 / fan_in))`.
pub fn msra_init<T: Element>(param: &mut Param<T>, fan_in: usize, rng: &mut Rng) -> Result<()> {
    let stddev = (2.0 / fan_in as f64).sqrt();
    param.value = Tensor::gaussian(param.value.shape(), 0.0, stddev, rng)?;
    Ok(())
}

/// Receives every piece of mutable state in a layer tree, keyed by a dotted path.
pub trait StateVisitor<T: Element> {
    fn param(&mut self, name: &str, param: &mut Param<T>);

    fn buffer(&mut self, _name: &str, _buffer: &mut Tensor<T>) {}

    fn rng(&mut self, _name: &str, _rng: &mut Rng) {}

    fn residual_weight(&mut self, _name: &str, _weight: &mut ResidualWeight) {}
}

pub trait Layer<T: Element>: Send {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>>;

    fn visit(&mut self, _prefix: &str, _visitor: &mut dyn StateVisitor<T>) {}

    /// Number of convolution and fully connected layers, the unit of depth.
    fn counted_layers(&self) -> usize {
        0
    }

    fn kind(&self) -> &'static str;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Element> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(mut self, name: &str, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push((name.to_string(), Box::new(layer)));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut (dyn Layer<T> + 'static)> {
        self.layers
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l.as_mut())
    }
}

impl<T: Element> Layer<T> for Sequential<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut iter = self.layers.iter_mut();
        let Some((_, first)) = iter.next() else {
            return Ok(input.clone());
        };
        let mut x = first.forward(input, mode)?;
        for (_, layer) in iter {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut iter = self.layers.iter_mut().rev();
        let Some((_, last)) = iter.next() else {
            return Ok(grad_output.clone());
        };
        let mut g = last.backward(grad_output)?;
        for (_, layer) in iter {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        for (name, layer) in &mut self.layers {
            layer.visit(&join(prefix, name), visitor);
        }
    }

    fn counted_layers(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.counted_layers()).sum()
    }

    fn kind(&self) -> &'static str {
        "sequential"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msra_stddev() {
        let mut p = Param::new(Tensor::<f64>::zeros(&[64, 16, 3, 3]).unwrap());
        msra_init(&mut p, 16 * 9, &mut Rng::new(4)).unwrap();
        let n = p.value.len() as f64;
        let mean = p.value.data().iter().sum::<f64>() / n;
        let sd = (p.value.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = (2.0f64 / 144.0).sqrt();
        assert!((target - 0.1179).abs() < 1e-4);
        // 9216 samples: relative standard error of the stddev is about 0.7%
        assert!((sd / target - 1.0).abs() < 0.05, "sd {sd}");

        let mut q = Param::new(Tensor::<f64>::zeros(&[64, 16, 3, 3]).unwrap());
        msra_init(&mut q, 16 * 9, &mut Rng::new(4)).unwrap();
        assert!(p.value.bit_eq(&q.value));
    }

    #[test]
    fn msra_unit_stddev_for_fan_in_two() {
        let mut p = Param::new(Tensor::<f64>::zeros(&[20000]).unwrap());
        msra_init(&mut p, 2, &mut Rng::new(8)).unwrap();
        let sd = (p.value.sum_sq() / p.value.len() as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.03, "sd {sd}");
    }
}
