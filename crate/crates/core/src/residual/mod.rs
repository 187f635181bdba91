//! Residual units, the block-boundary downsampling layer and the CIFAR network builder.

mod network;
mod unit;

pub use network::{build_network, compose_check, Network, NetworkConfig, Variant, BLOCKS};
pub use unit::{residual_branch, Downsample, OriginalUnit, Unit, WeightedUnit};

/// Learnable scalar scaling one residual branch, kept inside `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualWeight {
    pub value: f64,
    pub grad: f64,
    pub velocity: f64,
    pub lower: f64,
    pub upper: f64,
    pub lr_mult: f64,
}

impl ResidualWeight {
    /// Zero-initialized weight constrained to `[-1, 1]`.
    pub fn new() -> Self {
        ResidualWeight {
            value: 0.0,
            grad: 0.0,
            velocity: 0.0,
            lower: -1.0,
            upper: 1.0,
            lr_mult: 1.0,
        }
    }

    /// Euclidean projection onto the constraint interval.
    pub fn project(&mut self) {
        self.value = self.value.clamp(self.lower, self.upper);
    }

    pub fn in_bounds(&self) -> bool {
        (self.lower..=self.upper).contains(&self.value)
    }
}

impl Default for ResidualWeight {
    fn default() -> Self {
        Self::new()
    }
}
