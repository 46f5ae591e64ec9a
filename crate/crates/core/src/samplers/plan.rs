use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// One stochastic reverse step per diffusion step.
    Ancestral,
    /// Deterministic jumps over evenly spaced steps.
    Uniform,
    /// Deterministic jumps over the exponentially spaced schedule.
    DipsBasic,
    /// A distilled one-step jump to `N`, then the exponential schedule from `N`.
    DipsAdvanced,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::Ancestral,
        SamplerKind::Uniform,
        SamplerKind::DipsBasic,
        SamplerKind::DipsAdvanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ancestral => "ancestral",
            SamplerKind::Uniform => "uniform",
            SamplerKind::DipsBasic => "dips-basic",
            SamplerKind::DipsAdvanced => "dips-advanced",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler kind `{s}`")))
    }
}

/// The unfloored terminal step `10 / ln S`.
pub fn t_last(s: usize) -> f64 {
    10.0 / (s as f64).ln()
}

/// The `S` floored points of the exponential spacing, from `start` down to
/// `floor(10 / ln S)`, before collisions are removed. Larger `r` packs more
/// points near the end; `r = 0` is the linear limit.
pub fn dips_points(start: usize, s: usize, r: f64) -> Result<Vec<usize>> {
    if s < 2 {
        return Err(Error::InvalidArgument(format!("DIPS needs S >= 2, got {s}")));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("density r must be finite and >= 0, got {r}")));
    }
    let tl = t_last(s);
    if start as f64 <= tl.floor() {
        return Err(Error::InvalidArgument(format!(
            "start step {start} must exceed the terminal step {}",
            tl.floor()
        )));
    }
    let span = start as f64 - tl;
    Ok((1..=s)
        .rev()
        .map(|i| {
            let u = (i - 1) as f64 / (s - 1) as f64;
            let frac = if r < 1e-9 { u } else { (r * u).exp_m1() / r.exp_m1() };
            (tl + span * frac).floor() as usize
        })
        .collect())
}

/// [`dips_points`] with repeated entries kept once, then the terminal 0.
pub fn dips_schedule(start: usize, s: usize, r: f64) -> Result<Vec<usize>> {
    let mut steps = dips_points(start, s, r)?;
    steps.dedup();
    if steps.last() != Some(&0) {
        steps.push(0);
    }
    Ok(steps)
}

/// `S` evenly spaced steps from `T` down, then 0.
pub fn uniform_schedule(t: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > t {
        return Err(Error::InvalidArgument(format!("uniform schedule needs 1 <= S <= T, got S={s}, T={t}")));
    }
    let mut steps: Vec<usize> = (1..=s).rev().map(|i| (2 * i * t + s) / (2 * s)).collect();
    steps.push(0);
    Ok(steps)
}

/// A fully resolved sampling schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub kind: SamplerKind,
    /// Strictly descending, ending in 0.
    pub steps: Vec<usize>,
    /// Number of trained diffusion steps.
    pub total_steps: usize,
    pub accel_steps: usize,
    pub r: f64,
    /// Truncation start for the distilled jump.
    pub truncation: Option<usize>,
    pub t_last: Option<usize>,
}

impl SamplerPlan {
    pub fn ancestral(total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::InvalidArgument("ancestral plan needs T >= 1".into()));
        }
        Ok(SamplerPlan {
            kind: SamplerKind::Ancestral,
            steps: (0..=total).rev().collect(),
            total_steps: total,
            accel_steps: total,
            r: 0.0,
            truncation: None,
            t_last: None,
        })
    }

    pub fn uniform(total: usize, s: usize) -> Result<Self> {
        Ok(SamplerPlan {
            kind: SamplerKind::Uniform,
            steps: uniform_schedule(total, s)?,
            total_steps: total,
            accel_steps: s,
            r: 0.0,
            truncation: None,
            t_last: None,
        })
    }

    pub fn dips_basic(total: usize, s: usize, r: f64) -> Result<Self> {
        Ok(SamplerPlan {
            kind: SamplerKind::DipsBasic,
            steps: dips_schedule(total, s, r)?,
            total_steps: total,
            accel_steps: s,
            r,
            truncation: None,
            t_last: Some(t_last(s).floor() as usize),
        })
    }

    pub fn dips_advanced(total: usize, n: usize, s: usize, r: f64) -> Result<Self> {
        if n == 0 || n >= total {
            return Err(Error::InvalidArgument(format!("truncation N must satisfy 1 <= N < T, got N={n}, T={total}")));
        }
        Ok(SamplerPlan {
            kind: SamplerKind::DipsAdvanced,
            steps: dips_schedule(n, s, r)?,
            total_steps: total,
            accel_steps: s,
            r,
            truncation: Some(n),
            t_last: Some(t_last(s).floor() as usize),
        })
    }

    pub fn build(kind: SamplerKind, total: usize, s: usize, r: f64, n: usize) -> Result<Self> {
        match kind {
            SamplerKind::Ancestral => Self::ancestral(total),
            SamplerKind::Uniform => Self::uniform(total, s),
            SamplerKind::DipsBasic => Self::dips_basic(total, s, r),
            SamplerKind::DipsAdvanced => Self::dips_advanced(total, n, s, r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = match self.kind {
            SamplerKind::DipsAdvanced => self.truncation.ok_or(Error::InvalidArgument("missing truncation".into()))?,
            _ => self.total_steps,
        };
        let bad = |m: &str| Err(Error::InvalidArgument(format!("invalid {} plan: {m}", self.kind)));
        if self.steps.first() != Some(&first) {
            return bad("first step must be the start index");
        }
        if self.steps.last() != Some(&0) {
            return bad("last step must be 0");
        }
        if self.steps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("steps must strictly decrease");
        }
        Ok(())
    }

    /// Noise-predictor evaluations the plan needs, excluding the distilled jump.
    pub fn eps_evaluations(&self) -> usize {
        self.steps.len() - 1
    }
}
