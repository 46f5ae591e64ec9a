use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSchedule {
    Linear,
}

/// Noise-level tables for steps `1..=T`, with `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    kind: BetaSchedule,
    beta_start: f64,
    beta_end: f64,
    /// Index 0 is unused padding so tables are addressed by step.
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(kind: BetaSchedule, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta bounds must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut beta = vec![0.0; steps + 1];
        match kind {
            BetaSchedule::Linear => {
                for (t, b) in beta.iter_mut().enumerate().skip(1) {
                    *b = if steps == 1 {
                        beta_start
                    } else {
                        beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
                    };
                }
            }
        }
        let mut alpha_bar = vec![1.0; steps + 1];
        let mut posterior_var = vec![0.0; steps + 1];
        for t in 1..=steps {
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
            posterior_var[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }
        Ok(DiffusionSchedule {
            kind,
            beta_start,
            beta_end,
            beta,
            alpha_bar,
            posterior_var,
        })
    }

    /// The common 1000-step linear schedule rescaled to `steps`, keeping the
    /// integrated noise comparable (`beta·1000/steps`).
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let k = 1000.0 / steps as f64;
        Self::new(BetaSchedule::Linear, steps, 1e-4 * k, (0.02 * k).min(0.999))
    }

    pub fn kind(&self) -> BetaSchedule {
        self.kind
    }

    pub fn beta_bounds(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Variance of the reverse transition `t → t-1`; zero at `t = 1`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(())
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn q_sample<T: Real>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &DiffusionSchedule) -> Result<Tensor<T>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Input of the noisy-image branch: the residual of `x_t` from the scaled
/// clean image, divided by the noise std at its step, so the network sees
/// unit-scale input at every noise level. `levels` gives one step per item.
pub fn standardize_input(x_t: &Tensor, clean: &Tensor, levels: &[usize], sched: &DiffusionSchedule) -> Result<Tensor> {
    crate::numerics::check_same("standardize_input", x_t.shape(), clean.shape())?;
    let n = x_t.shape().batch();
    if levels.len() != n {
        return Err(Error::dim("standardize_input", "batch (steps)", levels.len(), n));
    }
    let per = x_t.numel() / n.max(1);
    let mut out = x_t.clone();
    for (b, &t) in levels.iter().enumerate() {
        sched.check_step(t)?;
        let ab = sched.alpha_bar(t);
        let (a, inv) = (ab.sqrt(), 1.0 / (1.0 - ab).sqrt());
        let range = b * per..(b + 1) * per;
        for (o, c) in out.data_mut()[range.clone()].iter_mut().zip(&clean.data()[range]) {
            *o = ((*o as f64 - a * *c as f64) * inv) as f32;
        }
    }
    Ok(out)
}

/// [`q_sample`] with one step per batch item.
pub fn q_sample_batch<T: Real>(
    x0: &Tensor<T>,
    steps: &[usize],
    eps: &Tensor<T>,
    sched: &DiffusionSchedule,
) -> Result<Tensor<T>> {
    crate::numerics::check_same("q_sample", x0.shape(), eps.shape())?;
    let n = x0.shape().batch();
    if steps.len() != n {
        return Err(Error::dim("q_sample", "batch (steps)", steps.len(), n));
    }
    let per = x0.numel() / n.max(1);
    let mut out = x0.clone();
    for (b, &t) in steps.iter().enumerate() {
        sched.check_step(t)?;
        let (a, s) = (sched.alpha_bar(t).sqrt(), (1.0 - sched.alpha_bar(t)).sqrt());
        let range = b * per..(b + 1) * per;
        for (o, e) in out.data_mut()[range.clone()].iter_mut().zip(&eps.data()[range]) {
            *o = T::from_f64(a * o.as_f64() + s * e.as_f64());
        }
    }
    Ok(out)
}
