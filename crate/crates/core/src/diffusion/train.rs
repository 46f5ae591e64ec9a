use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{q_sample_batch, standardize_input, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::model::{CameraSettings, EpsModel, Parameters};
use crate::numerics::{check_same, Shape, Tape, Tensor};

/// Paired noisy targets and clean conditioning images, pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub x0: Tensor,
    pub clean: Tensor,
    pub settings: Vec<CameraSettings>,
}

impl TrainBatch {
    pub fn new(x0: Tensor, clean: Tensor, settings: Vec<CameraSettings>) -> Result<Self> {
        check_same("train_batch", x0.shape(), clean.shape())?;
        if settings.len() != x0.shape().batch() {
            return Err(Error::dim("train_batch", "batch (settings)", settings.len(), x0.shape().batch()));
        }
        let in_range = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(&x0) || !in_range(&clean) {
            return Err(Error::InvalidArgument("training pixels must lie in [0, 1]".into()));
        }
        Ok(TrainBatch { x0, clean, settings })
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }
}

/// Pixel values `[0, 1]` map to model space `[-1, 1]`.
pub fn to_model_space(t: &Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

pub fn from_model_space(t: &Tensor) -> Tensor {
    t.map(|v| 0.5 * (v + 1.0))
}

/// Noise-prediction objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean squared error.
    #[default]
    SquaredMean,
    /// Root of the mean squared error (an unsquared L2 norm up to scale).
    Norm,
}

/// Random quantities drawn by one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDraws {
    pub steps: Vec<usize>,
    pub eps: Tensor,
}

/// Draws a step uniformly from `1..=T` for every item, then unit Gaussian noise.
pub fn draw_step_noise<R: Rng + ?Sized>(shape: Shape, sched: &DiffusionSchedule, rng: &mut R) -> StepDraws {
    let steps = (0..shape.batch()).map(|_| rng.gen_range(1..=sched.steps())).collect();
    let eps = Tensor::randn(shape, rng);
    StepDraws { steps, eps }
}

pub struct StepOutput {
    pub loss: f64,
    pub grads: Parameters,
    pub draws: StepDraws,
}

/// Forward-noises the batch at random steps and differentiates the
/// noise-prediction loss with respect to every model parameter.
pub fn training_step<M, R>(
    batch: &TrainBatch,
    model: &M,
    sched: &DiffusionSchedule,
    loss_kind: LossKind,
    rng: &mut R,
) -> Result<StepOutput>
where
    M: EpsModel + ?Sized,
    R: Rng + ?Sized,
{
    let x0 = to_model_space(&batch.x0);
    let clean = to_model_space(&batch.clean);
    let draws = draw_step_noise(x0.shape(), sched, rng);
    let x_t = q_sample_batch(&x0, &draws.steps, &draws.eps, sched)?;
    let input = standardize_input(&x_t, &clean, &draws.steps, sched)?;

    let mut tape = Tape::new();
    let x_var = tape.constant(input);
    let s_var = tape.constant(clean);
    let (eps_hat, bound) = model.forward(&mut tape, x_var, &draws.steps, s_var, &batch.settings)?;
    let target = tape.constant(draws.eps.clone());
    let mut loss = tape.mse_loss(eps_hat, target)?;
    if loss_kind == LossKind::Norm {
        loss = tape.sqrt(loss)?;
    }
    let loss_value = tape.value(loss).data()[0] as f64;
    if !loss_value.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite training loss {loss_value}")));
    }
    let mut grads = tape.backward(loss)?;
    let grads = bound.collect_grads(&tape, &mut grads);
    Ok(StepOutput {
        loss: loss_value,
        grads,
        draws,
    })
}
