//! Reverse-process samplers and the distilled one-step jump.

mod distill;
mod plan;
mod sample;
mod steps;

pub use distill::{distill_one_step, distill_step, DistillStep, Distilled};
pub use plan::{dips_points, dips_schedule, t_last, uniform_schedule, SamplerKind, SamplerPlan};
pub use sample::{akld_trajectory, sample};
pub use steps::{ancestral_mean, ancestral_step, deterministic_jump, predict_x0};
