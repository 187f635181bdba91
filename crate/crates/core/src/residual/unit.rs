use super::ResidualWeight;
use crate::error::{Error, Result};
use crate::layers::{relu, relu_backward};
use crate::layers::{join, BatchNorm2d, Conv2d, Dropout, Layer, Mode, Relu, Sequential, StateVisitor};
use crate::tensor::{Element, Rng, Tensor};

/// Channel-preserving branch `Conv-BN-ReLU-Conv-BN[-ReLU][-Dropout]`.
///
/// The weighted unit uses the trailing ReLU; the original unit stops after
/// the second batch norm and applies its ReLU after the addition instead.
pub fn residual_branch<T: Element>(
    channels: usize,
    final_relu: bool,
    dropout: Option<(f64, Rng)>,
    init_rng: &mut Rng,
) -> Result<Sequential<T>> {
    let mut seq = Sequential::new()
        .push("conv1", Conv2d::new(channels, channels, 3, 1, 1, init_rng)?)
        .push("bn1", BatchNorm2d::new(channels)?)
        .push("relu1", Relu::new())
        .push("conv2", Conv2d::new(channels, channels, 3, 1, 1, init_rng)?)
        .push("bn2", BatchNorm2d::new(channels)?);
    if final_relu {
        seq = seq.push("relu2", Relu::new());
    }
    if let Some((ratio, rng)) = dropout {
        if ratio > 0.0 {
            seq = seq.push("dropout", Dropout::new(ratio, rng)?);
        }
    }
    Ok(seq)
}

/// `x + lambda * branch(x)` with nothing on the identity path.
pub struct WeightedUnit<T> {
    pub branch: Sequential<T>,
    pub lambda: ResidualWeight,
    branch_out: Option<Tensor<T>>,
}

impl<T: Element> WeightedUnit<T> {
    pub fn new(branch: Sequential<T>) -> Self {
        WeightedUnit {
            branch,
            lambda: ResidualWeight::new(),
            branch_out: None,
        }
    }

    /// `x + lambda * r`, elementwise in the tensor precision.
    pub fn combine(x: &Tensor<T>, lambda: f64, r: &Tensor<T>) -> Result<Tensor<T>> {
        let l = T::from_f64_lossy(lambda);
        x.zip_with(r, "weighted residual", |a, b| a + l * b)
    }
}

impl<T: Element> Layer<T> for WeightedUnit<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let r = self.branch.forward(input, mode)?;
        let out = Self::combine(input, self.lambda.value, &r)?;
        self.branch_out = Some(r);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self
            .branch_out
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "weighted_unit" })?;
        self.lambda.grad += grad_output.dot(&r)?;
        let branch_grad = grad_output.scale(T::from_f64_lossy(self.lambda.value));
        let mut grad_in = self.branch.backward(&branch_grad)?;
        grad_in.add_assign(grad_output)?;
        Ok(grad_in)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        self.branch.visit(&join(prefix, "branch"), visitor);
        visitor.residual_weight(&join(prefix, "lambda"), &mut self.lambda);
    }

    fn counted_layers(&self) -> usize {
        self.branch.counted_layers()
    }

    fn kind(&self) -> &'static str {
        "weighted_unit"
    }
}

/// `ReLU(x + branch(x))`, the baseline unit.
pub struct OriginalUnit<T> {
    pub branch: Sequential<T>,
    output: Option<Tensor<T>>,
}

impl<T: Element> OriginalUnit<T> {
    pub fn new(branch: Sequential<T>) -> Self {
        OriginalUnit {
            branch,
            output: None,
        }
    }
}

impl<T: Element> Layer<T> for OriginalUnit<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let r = self.branch.forward(input, mode)?;
        let out = relu(&input.add(&r)?);
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self
            .output
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "original_unit" })?;
        let g = relu_backward(grad_output, &out)?;
        let mut grad_in = self.branch.backward(&g)?;
        grad_in.add_assign(&g)?;
        Ok(grad_in)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        self.branch.visit(&join(prefix, "branch"), visitor);
    }

    fn counted_layers(&self) -> usize {
        self.branch.counted_layers()
    }

    fn kind(&self) -> &'static str {
        "original_unit"
    }
}

pub enum Unit<T> {
    Weighted(WeightedUnit<T>),
    Original(OriginalUnit<T>),
}

impl<T: Element> Unit<T> {
    pub fn branch_mut(&mut self) -> &mut Sequential<T> {
        match self {
            Unit::Weighted(u) => &mut u.branch,
            Unit::Original(u) => &mut u.branch,
        }
    }

    pub fn lambda(&self) -> Option<&ResidualWeight> {
        match self {
            Unit::Weighted(u) => Some(&u.lambda),
            Unit::Original(_) => None,
        }
    }

    pub fn lambda_mut(&mut self) -> Option<&mut ResidualWeight> {
        match self {
            Unit::Weighted(u) => Some(&mut u.lambda),
            Unit::Original(_) => None,
        }
    }

    fn inner(&mut self) -> &mut dyn Layer<T> {
        match self {
            Unit::Weighted(u) => u,
            Unit::Original(u) => u,
        }
    }
}

impl<T: Element> Layer<T> for Unit<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.inner().forward(input, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        self.inner().backward(grad_output)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        self.inner().visit(prefix, visitor)
    }

    fn counted_layers(&self) -> usize {
        match self {
            Unit::Weighted(u) => u.counted_layers(),
            Unit::Original(u) => u.counted_layers(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Unit::Weighted(u) => u.kind(),
            Unit::Original(u) => u.kind(),
        }
    }
}

/// Highway downsampling between blocks: `Conv3x3/s2 (C -> 2C)`, BN, ReLU.
pub struct Downsample<T> {
    pub layers: Sequential<T>,
}

impl<T: Element> Downsample<T> {
    pub fn new(in_channels: usize, init_rng: &mut Rng) -> Result<Self> {
        let out = 2 * in_channels;
        Ok(Downsample {
            layers: Sequential::new()
                .push("conv", Conv2d::new(in_channels, out, 3, 2, 1, init_rng)?)
                .push("bn", BatchNorm2d::new(out)?)
                .push("relu", Relu::new()),
        })
    }
}

impl<T: Element> Layer<T> for Downsample<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (_, _, h, w) = input.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(input.shape(), "downsampling needs even spatial extents"));
        }
        self.layers.forward(input, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        self.layers.backward(grad_output)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        self.layers.visit(prefix, visitor)
    }

    fn counted_layers(&self) -> usize {
        self.layers.counted_layers()
    }

    fn kind(&self) -> &'static str {
        "downsample"
    }
}
