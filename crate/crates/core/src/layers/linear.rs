use super::{join, msra_init, Layer, Mode, Param, StateVisitor};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Element, MatRef, Rng, Tensor};

/// Fully connected layer `y = x W^T + b` with `W: [out, in]`, `b: [out]`.
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        let mut weight = Param::new(Tensor::zeros(&[out_features, in_features])?);
        msra_init(&mut weight, in_features, rng)?;
        Ok(Linear {
            weight,
            bias: Param::new(Tensor::zeros(&[out_features])?).without_decay(),
            input: None,
        })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::mismatch("linear bias", bias.shape(), &[out]));
        }
        Ok(Linear {
            weight: Param::new(weight),
            bias: Param::new(bias).without_decay(),
            input: None,
        })
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Element> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (b, c) = input.dims2()?;
        let (k, wc) = self.weight.value.dims2()?;
        if c != wc {
            return Err(Error::mismatch("linear", input.shape(), self.weight.value.shape()));
        }
        let mut out = Vec::with_capacity(b * k);
        for _ in 0..b {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(
            MatRef::new(input.data(), b, c),
            MatRef::new(self.weight.value.data(), k, c).t(),
            T::one(),
            &mut out,
        );
        self.input = Some(input.clone());
        Tensor::from_vec(&[b, k], out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "linear" })?;
        let (b, c) = input.dims2()?;
        let k = self.out_features();
        if grad_output.shape() != [b, k] {
            return Err(Error::mismatch("linear backward", grad_output.shape(), &[b, k]));
        }
        let g = MatRef::new(grad_output.data(), b, k);
        gemm(g.t(), MatRef::new(input.data(), b, c), T::one(), self.weight.grad.data_mut());
        for row in grad_output.data().chunks_exact(k) {
            for (acc, &v) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        let mut grad_in = vec![T::zero(); b * c];
        gemm(g, MatRef::new(self.weight.value.data(), k, c), T::zero(), &mut grad_in);
        Tensor::from_vec(&[b, c], grad_in)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        visitor.param(&join(prefix, "weight"), &mut self.weight);
        visitor.param(&join(prefix, "bias"), &mut self.bias);
    }

    fn counted_layers(&self) -> usize {
        1
    }

    fn kind(&self) -> &'static str {
        "linear"
    }
}
