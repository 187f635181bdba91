use super::{join, Layer, Mode, StateVisitor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Tensor};

/// Inverted dropout: in TRAIN each element is zeroed with probability
/// `ratio` and survivors are scaled by `1 / (1 - ratio)`; EVAL is the identity.
pub struct Dropout<T> {
    ratio: f64,
    rng: Rng,
    mask: Option<Option<Vec<T>>>,
}

impl<T: Element> Dropout<T> {
    pub fn new(ratio: f64, rng: Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidArgument(format!(
                "dropout ratio must lie in [0, 1), got {ratio}"
            )));
        }
        Ok(Dropout {
            ratio,
            rng,
            mask: None,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }
}

/// Applies inverted dropout and returns the multiplicative mask, if any was drawn.
pub fn dropout<T: Element>(
    input: &Tensor<T>,
    mode: Mode,
    ratio: f64,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "dropout ratio must lie in [0, 1), got {ratio}"
        )));
    }
    if mode == Mode::Eval || ratio == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - ratio));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.uniform() < ratio { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
}

impl<T: Element> Layer<T> for Dropout<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, mask) = dropout(input, mode, self.ratio, &mut self.rng)?;
        self.mask = Some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .take()
            .ok_or(Error::BackwardBeforeForward { layer: "dropout" })?;
        match mask {
            None => Ok(grad_output.clone()),
            Some(mask) => {
                if mask.len() != grad_output.len() {
                    return Err(Error::mismatch("dropout backward", grad_output.shape(), &[mask.len()]));
                }
                let data = grad_output.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(grad_output.shape(), data)
            }
        }
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        visitor.rng(&join(prefix, "rng"), &mut self.rng);
    }

    fn kind(&self) -> &'static str {
        "dropout"
    }
}
