//! Tensor type and the differentiable operations the denoiser is built from.

mod scalar;
mod tape;
mod tensor;

#[cfg(test)]
pub(crate) mod gradcheck;

pub use scalar::Real;
pub use tape::{Activation, Grads, Padding, Resample, Tape, Var};
pub use tensor::{Shape, Tensor};

pub(crate) use tensor::check_same;
