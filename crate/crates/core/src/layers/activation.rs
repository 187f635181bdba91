use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `max(x, 0)`; the gradient at exactly zero is taken as zero.
#[derive(Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Element> Relu<T> {
    pub fn new() -> Self {
        Relu { output: None }
    }
}

pub(crate) fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `grad * [output > 0]`
pub(crate) fn relu_backward<T: Element>(grad: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad.zip_with(output, "relu_backward", |g, y| if y > T::zero() { g } else { T::zero() })
}

impl<T: Element> Layer<T> for Relu<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = relu(input);
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let output = self
            .output
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "relu" })?;
        relu_backward(grad_output, &output)
    }

    fn kind(&self) -> &'static str {
        "relu"
    }
}
