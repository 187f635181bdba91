use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Spatial mean: `[B, C, H, W] -> [B, C]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { input_shape: None }
    }
}

impl<T: Element> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (b, c, h, w) = input.dims4()?;
        let area = h * w;
        let inv = T::from_f64_lossy(1.0 / area as f64);
        let data = input
            .data()
            .chunks_exact(area)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        self.input_shape = Some(input.shape().to_vec());
        Tensor::from_vec(&[b, c], data)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "global_avg_pool" })?;
        let (b, c) = grad_output.dims2()?;
        if [b, c] != shape[..2] {
            return Err(Error::mismatch("global_avg_pool backward", grad_output.shape(), &shape));
        }
        let area = shape[2] * shape[3];
        let inv = T::from_f64_lossy(1.0 / area as f64);
        let mut data = Vec::with_capacity(b * c * area);
        for &g in grad_output.data() {
            data.extend(std::iter::repeat_n(g * inv, area));
        }
        Tensor::from_vec(&shape, data)
    }

    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }
}
