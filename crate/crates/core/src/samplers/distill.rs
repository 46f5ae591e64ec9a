use rand::Rng;

use crate::diffusion::{
    adam_update, q_sample, standardize_input, to_model_space, AdamConfig, AdamState, DiffusionSchedule, TrainBatch,
};
use crate::error::{Error, Result};
use crate::model::{EpsModel, NoiseModel, Parameters};
use crate::numerics::{Tape, Tensor};

pub struct DistillStep {
    pub loss: f64,
    pub grads: Parameters,
}

/// Regresses `ψ(x_T, N)` onto the frozen teacher's `ε_θ(x_N, N)`, where
/// `x_T` and `x_N` share one noise draw.
pub fn distill_step<R: Rng + ?Sized>(
    psi: &NoiseModel,
    teacher: &NoiseModel,
    batch: &TrainBatch,
    sched: &DiffusionSchedule,
    n: usize,
    rng: &mut R,
) -> Result<DistillStep> {
    let total = sched.steps();
    if n == 0 || n >= total {
        return Err(Error::InvalidArgument(format!("truncation N must satisfy 1 <= N < T, got N={n}, T={total}")));
    }
    let x0 = to_model_space(&batch.x0);
    let clean = to_model_space(&batch.clean);
    let eps = Tensor::randn(x0.shape(), rng);
    let x_t = q_sample(&x0, total, &eps, sched)?;
    let x_n = q_sample(&x0, n, &eps, sched)?;
    let steps = vec![n; batch.len()];
    let target = teacher.predict(&standardize_input(&x_n, &clean, &steps, sched)?, &steps, &clean, &batch.settings)?;

    let mut tape = Tape::new();
    let xv = tape.constant(standardize_input(&x_t, &clean, &vec![total; batch.len()], sched)?);
    let sv = tape.constant(clean);
    let (out, bound) = psi.forward(&mut tape, xv, &steps, sv, &batch.settings)?;
    let tv = tape.constant(target);
    let loss = tape.mse_loss(out, tv)?;
    let value = tape.value(loss).data()[0] as f64;
    let mut grads = tape.backward(loss)?;
    Ok(DistillStep {
        loss: value,
        grads: bound.collect_grads(&tape, &mut grads),
    })
}

pub struct Distilled {
    pub psi: NoiseModel,
    pub losses: Vec<f64>,
}

/// Trains a one-step model initialized from `teacher`. `data` supplies the
/// batch for each iteration.
pub fn distill_one_step<R, F>(
    teacher: &NoiseModel,
    sched: &DiffusionSchedule,
    n: usize,
    iters: usize,
    adam: &AdamConfig,
    mut data: F,
    rng: &mut R,
) -> Result<Distilled>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> Result<TrainBatch>,
{
    if n == 0 || n >= sched.steps() {
        return Err(Error::InvalidArgument(format!(
            "truncation N must satisfy 1 <= N < T, got N={n}, T={}",
            sched.steps()
        )));
    }
    let mut psi = teacher.clone();
    let mut state = AdamState::new(psi.params());
    let mut losses = Vec::with_capacity(iters);
    for i in 0..iters {
        let batch = data(i, rng)?;
        let step = distill_step(&psi, teacher, &batch, sched, n, rng)?;
        let (p, s) = adam_update(psi.params(), &step.grads, &state, adam)?;
        psi = psi.with_params(p)?;
        state = s;
        losses.push(step.loss);
    }
    Ok(Distilled { psi, losses })
}
