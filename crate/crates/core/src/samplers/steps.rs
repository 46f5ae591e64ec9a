use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::numerics::{check_same, Tensor};

/// `(x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
pub fn predict_x0(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x_t.axpby(1.0 / ab.sqrt(), eps_hat, -(1.0 - ab).sqrt() / ab.sqrt())
}

/// Noise-free move from `t` to `t_next < t` along the predicted noise.
/// `t_next == t` is the identity.
pub fn deterministic_jump(
    x_t: &Tensor,
    t: usize,
    t_next: usize,
    eps_hat: &Tensor,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    if t_next > t {
        return Err(Error::InvalidArgument(format!("jump must go down, got {t} -> {t_next}")));
    }
    if t_next == t {
        check_same("deterministic_jump", x_t.shape(), eps_hat.shape())?;
        return Ok(x_t.clone());
    }
    let x0 = predict_x0(x_t, t, eps_hat, sched)?;
    if t_next == 0 {
        return Ok(x0);
    }
    let an = sched.alpha_bar(t_next);
    x0.axpby(an.sqrt(), eps_hat, (1.0 - an).sqrt())
}

/// Mean of the reverse transition `t → t−1`.
pub fn ancestral_mean(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let (a, b, ab) = (sched.alpha(t), sched.beta(t), sched.alpha_bar(t));
    x_t.axpby(1.0 / a.sqrt(), eps_hat, -b / ((1.0 - ab).sqrt() * a.sqrt()))
}

/// One stochastic reverse step; no noise is added at `t = 1`.
pub fn ancestral_step<R: Rng + ?Sized>(
    x_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let mut mean = ancestral_mean(x_t, t, eps_hat, sched)?;
    let sd = sched.posterior_var(t).sqrt();
    if t > 1 {
        for v in mean.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v as f64 + sd * z) as f32;
        }
    }
    Ok(mean)
}
