//! Dense row-major tensors and the numeric kernels the layers build on.

mod conv;
mod element;
mod rng;

pub use conv::{conv2d, conv2d_backward, conv_output_extent};
pub use element::{DType, Element};
pub(crate) use element::{gemm, MatRef};
pub use rng::{streams, Rng, RngState};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Dense tensor of order at most four, conventionally `B x C x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_ORDER {
        return Err(Error::shape(shape, "order must be between 1 and 4"));
    }
    if shape.contains(&0) {
        return Err(Error::shape(shape, "extents must be at least 1"));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(
                shape,
                format!("expected {len} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn fill(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::fill(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::fill(shape, T::one())
    }

    /// I.i.d. normal samples drawn in row-major order from `rng`.
    pub fn gaussian(shape: &[usize], mean: f64, stddev: f64, rng: &mut Rng) -> Result<Self> {
        if stddev.is_nan() || stddev < 0.0 || !mean.is_finite() || !stddev.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian needs finite mean and stddev >= 0, got mean={mean} stddev={stddev}"
            )));
        }
        let len = check_shape(shape)?;
        let data = (0..len)
            .map(|_| T::from_f64_lossy(mean + stddev * rng.standard_normal()))
            .collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(B, C, H, W)` of an order-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape(&self.shape, "expected a B x C x H x W tensor")),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(&self.shape, "expected a matrix")),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::mismatch("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn set_zero(&mut self) {
        self.data.fill(T::zero());
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.as_f64().abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a.as_f64() - b.as_f64()).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    /// Copy of sample `index` along the leading axis, keeping a unit batch dimension.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let b = self.shape[0];
        if index >= b {
            return Err(Error::InvalidArgument(format!(
                "batch index {index} out of range for batch of {b}"
            )));
        }
        let stride = self.data.len() / b;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor {
            shape,
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors() {
        let z = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert_eq!(z.len(), 6);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(Tensor::<f64>::ones(&[1]).unwrap().data(), &[1.0]);
        assert_eq!(Tensor::<f32>::fill(&[2, 2], 0.5).unwrap().data(), &[0.5; 4]);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros(&[2, 0]),
            Err(Error::InvalidShape { .. })
        ));
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(7);
        let t = Tensor::<f64>::gaussian(&[10000], 0.0, 1.0, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // standard error of the mean is 0.01 and of the stddev about 0.007
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn gaussian_edge_cases() {
        let mut rng = Rng::new(1);
        let z = Tensor::<f32>::gaussian(&[5, 5], 0.0, 0.0, &mut rng).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(Tensor::<f32>::gaussian(&[3], 0.0, -1.0, &mut rng).is_err());
        let a = Tensor::<f32>::gaussian(&[64], 0.0, 1.0, &mut Rng::new(3)).unwrap();
        let b = Tensor::<f32>::gaussian(&[64], 0.0, 1.0, &mut Rng::new(3)).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn elementwise() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.hadamard(&b).unwrap().data(), &[3.0, 8.0]);
        assert_eq!(a.scale(0.0).data(), &[0.0, 0.0]);
        assert!(a.scale(1.0).bit_eq(&a));
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[3, 2]).unwrap();
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }
}
