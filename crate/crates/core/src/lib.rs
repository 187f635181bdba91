pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod optim;
pub mod residual;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
