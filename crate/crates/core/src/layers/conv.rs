use super::{join, msra_init, Layer, Mode, Param, StateVisitor};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, Element, Rng, Tensor};

/// Bias-free square convolution; the following batch norm supplies the shift.
pub struct Conv2d<T> {
    pub weight: Param<T>,
    stride: usize,
    pad: usize,
    input: Option<Tensor<T>>,
}

impl<T: Element> Conv2d<T> {
    /// `kernel x kernel` convolution with msra-initialized weights.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut weight = Param::new(Tensor::zeros(&[out_channels, in_channels, kernel, kernel])?);
        msra_init(&mut weight, kernel * kernel * in_channels, rng)?;
        Ok(Self::from_weights(weight.value, stride, pad))
    }

    pub fn from_weights(weights: Tensor<T>, stride: usize, pad: usize) -> Self {
        Conv2d {
            weight: Param::new(weights),
            stride,
            pad,
            input: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Element> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = conv2d(input, &self.weight.value, self.stride, self.pad)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "conv2d" })?;
        conv2d_backward(
            grad_output,
            &input,
            &self.weight.value,
            self.stride,
            self.pad,
            &mut self.weight.grad,
        )
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        visitor.param(&join(prefix, "weight"), &mut self.weight);
    }

    fn counted_layers(&self) -> usize {
        1
    }

    fn kind(&self) -> &'static str {
        "conv2d"
    }
}
