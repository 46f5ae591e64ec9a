//! Camera-conditioned diffusion noise synthesis.

pub mod error;
pub mod numerics;
pub mod model;
pub mod diffusion;
pub mod metrics;
pub mod isp;
pub mod fixtures;
pub mod samplers;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};
pub use numerics::{Shape, Tensor};
