use rand::Rng;

use super::plan::{SamplerKind, SamplerPlan};
use super::steps::{ancestral_step, deterministic_jump, predict_x0};
use crate::diffusion::{from_model_space, standardize_input, to_model_space, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::metrics::{akld_samples, AkldConfig};
use crate::model::{CameraSettings, EpsModel};
use crate::numerics::Tensor;

/// Walks `plan` from fresh Gaussian noise, calling `observe(t, x_t, ε̂)` after
/// every noise-predictor evaluation. Returns the final state in model space.
fn run<M, R, F>(
    model: &M,
    plan: &SamplerPlan,
    clean: &Tensor,
    settings: &[CameraSettings],
    sched: &DiffusionSchedule,
    rng: &mut R,
    psi: Option<&M>,
    mut observe: F,
) -> Result<Tensor>
where
    M: EpsModel + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(usize, &Tensor, &Tensor) -> Result<()>,
{
    plan.validate()?;
    if plan.total_steps != sched.steps() {
        return Err(Error::InvalidArgument(format!(
            "plan is for T={} but the schedule has T={}",
            plan.total_steps,
            sched.steps()
        )));
    }
    let n = clean.shape().batch();
    let s = to_model_space(clean);
    let mut x = Tensor::randn(clean.shape(), rng);
    if plan.kind == SamplerKind::DipsAdvanced {
        let psi = psi.ok_or(Error::MissingPsi)?;
        let start = plan.steps[0];
        let input = standardize_input(&x, &s, &vec![plan.total_steps; n], sched)?;
        let eps = psi.predict(&input, &vec![start; n], &s, settings)?;
        x = deterministic_jump(&x, plan.total_steps, start, &eps, sched)?;
    }
    for w in plan.steps.windows(2) {
        let (t, next) = (w[0], w[1]);
        let levels = vec![t; n];
        let eps = model.predict(&standardize_input(&x, &s, &levels, sched)?, &levels, &s, settings)?;
        observe(t, &x, &eps)?;
        x = if plan.kind == SamplerKind::Ancestral {
            ancestral_step(&x, t, &eps, sched, rng)?
        } else {
            deterministic_jump(&x, t, next, &eps, sched)?
        };
    }
    Ok(x)
}

/// Draws one noisy image per item of `clean`, in `[0, 1]`.
pub fn sample<M, R>(
    model: &M,
    plan: &SamplerPlan,
    clean: &Tensor,
    settings: &[CameraSettings],
    sched: &DiffusionSchedule,
    rng: &mut R,
    psi: Option<&M>,
) -> Result<Tensor>
where
    M: EpsModel + ?Sized,
    R: Rng + ?Sized,
{
    let x = run(model, plan, clean, settings, sched, rng, psi, |_, _, _| Ok(()))?;
    Ok(from_model_space(&x).clamp(0.0, 1.0))
}

/// AKLD of the predicted clean-target estimate at each probe step of
/// ancestral sampling, against `real`. Step 0 is the final sample.
pub fn akld_trajectory<M, R>(
    model: &M,
    sched: &DiffusionSchedule,
    clean: &Tensor,
    real: &Tensor,
    settings: &[CameraSettings],
    probes: &[usize],
    cfg: &AkldConfig,
    rng: &mut R,
) -> Result<Vec<(usize, f64)>>
where
    M: EpsModel + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if probes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("probe steps must be strictly descending".into()));
    }
    if probes.iter().any(|&p| p > sched.steps()) {
        return Err(Error::InvalidArgument("probe step beyond T".into()));
    }
    let plan = SamplerPlan::ancestral(sched.steps())?;
    let mut snaps: Vec<Vec<Tensor>> = vec![Vec::with_capacity(cfg.samples); probes.len()];
    for _ in 0..cfg.samples {
        let x = run(model, &plan, clean, settings, sched, rng, None, |t, x_t, eps| {
            if let Some(i) = probes.iter().position(|&p| p == t) {
                let x0 = predict_x0(x_t, t, eps, sched)?;
                snaps[i].push(from_model_space(&x0).clamp(0.0, 1.0));
            }
            Ok(())
        })?;
        if let Some(i) = probes.iter().position(|&p| p == 0) {
            snaps[i].push(from_model_space(&x).clamp(0.0, 1.0));
        }
    }
    probes
        .iter()
        .zip(&snaps)
        .map(|(&p, s)| Ok((p, akld_samples(clean, real, s, cfg)?)))
        .collect()
}
