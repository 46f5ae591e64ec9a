use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::numerics::{check_same, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 8e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Parameters<T>,
    pub v: Parameters<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameters and state;
/// inputs are untouched.
pub fn adam_update<T: Real>(
    params: &Parameters<T>,
    grads: &Parameters<T>,
    state: &AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(Parameters<T>, AdamState<T>)> {
    let step = state.step + 1;
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut new_p = params.clone();
    let mut new_m = state.m.clone();
    let mut new_v = state.v.clone();
    for (name, p) in new_p.iter_mut() {
        let g = grads.get(name)?;
        let m = new_m.get_mut(name).ok_or_else(|| missing("first moment", name))?;
        let v = new_v.get_mut(name).ok_or_else(|| missing("second moment", name))?;
        check_same("adam_update", p.shape(), g.shape())?;
        check_same("adam_update", p.shape(), m.shape())?;
        check_same("adam_update", p.shape(), v.shape())?;
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, gi) in g.data().iter().enumerate() {
            let gi = gi.as_f64();
            let mi = cfg.beta1 * md[i].as_f64() + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * vd[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
            let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            md[i] = T::from_f64(mi);
            vd[i] = T::from_f64(vi);
            pd[i] = T::from_f64(pd[i].as_f64() - update);
        }
    }
    Ok((
        new_p,
        AdamState {
            m: new_m,
            v: new_v,
            step,
        },
    ))
}

fn missing(what: &str, name: &str) -> Error {
    Error::InvalidArgument(format!("optimizer {what} has no entry `{name}`"))
}

/// `decay·ema + (1−decay)·params`, name by name.
pub fn ema_update<T: Real>(ema: &Parameters<T>, params: &Parameters<T>, decay: f64) -> Result<Parameters<T>> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("EMA decay {decay} outside [0, 1]")));
    }
    let mut out = Parameters::new();
    for (name, e) in ema.iter() {
        let p = params.get(name)?;
        let t: Tensor<T> = e.axpby(decay, p, 1.0 - decay)?;
        out.insert(name, t);
    }
    if out.len() != params.len() {
        return Err(Error::InvalidArgument("EMA and parameter tables differ".into()));
    }
    Ok(out)
}

/// Sums gradient tables, e.g. across accumulation micro-batches.
pub fn add_grads<T: Real>(acc: &mut Parameters<T>, g: &Parameters<T>) -> Result<()> {
    for (name, a) in acc.iter_mut() {
        let gi = g.get(name)?;
        *a = a.add(gi)?;
    }
    Ok(())
}

pub fn scale_grads<T: Real>(g: &mut Parameters<T>, k: f64) {
    for (_, t) in g.iter_mut() {
        *t = t.map(|v| T::from_f64(v.as_f64() * k));
    }
}
