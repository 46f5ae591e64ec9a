use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_same, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AkldConfig {
    /// Side of the square box window; odd.
    pub window: usize,
    /// Generated samples per reference image.
    pub samples: usize,
    pub variance_floor: f64,
}

impl Default for AkldConfig {
    fn default() -> Self {
        AkldConfig {
            window: 7,
            samples: 8,
            variance_floor: 1e-6,
        }
    }
}

impl AkldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("AKLD window must be odd and >= 3, got {}", self.window)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("AKLD needs at least one generated sample".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidArgument("AKLD variance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Box-window mean and floored variance of every full window, plane by plane.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn local_moments(noise: &Tensor, window: usize, floor: f64) -> Result<LocalMoments> {
    let s = noise.shape();
    let (h, w) = (s.height(), s.width());
    if h < window || w < window {
        return Err(Error::InvalidShape {
            op: "local_moments",
            detail: format!("{h}x{w} image is smaller than the {window}x{window} window"),
        });
    }
    let (oh, ow) = (h - window + 1, w - window + 1);
    let area = (window * window) as f64;
    let mut mean = Vec::with_capacity(s.batch() * s.channels() * oh * ow);
    let mut var = Vec::with_capacity(mean.capacity());
    // Summed-area tables with a zero border row and column.
    let mut s1 = vec![0.0f64; (h + 1) * (w + 1)];
    let mut s2 = vec![0.0f64; (h + 1) * (w + 1)];
    for plane in noise.data().chunks(s.plane()) {
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x] as f64;
                let i = (y + 1) * (w + 1) + x + 1;
                s1[i] = v + s1[i - 1] + s1[i - w - 1] - s1[i - w - 2];
                s2[i] = v * v + s2[i - 1] + s2[i - w - 1] - s2[i - w - 2];
            }
        }
        let rect = |t: &[f64], y: usize, x: usize| {
            let (y1, x1) = (y + window, x + window);
            t[y1 * (w + 1) + x1] - t[y * (w + 1) + x1] - t[y1 * (w + 1) + x] + t[y * (w + 1) + x]
        };
        for y in 0..oh {
            for x in 0..ow {
                let m = rect(&s1, y, x) / area;
                let v = rect(&s2, y, x) / area - m * m;
                mean.push(m);
                var.push(v.max(floor));
            }
        }
    }
    Ok(LocalMoments { mean, var })
}

/// Average per-pixel `KL(real ‖ generated)` between local Gaussian fits of the
/// noise maps `real − clean` and `sample − clean`, over all samples.
pub fn akld_samples(clean: &Tensor, real: &Tensor, samples: &[Tensor], cfg: &AkldConfig) -> Result<f64> {
    cfg.validate()?;
    check_same("akld", clean.shape(), real.shape())?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("AKLD needs at least one generated sample".into()));
    }
    let r = local_moments(&real.sub(clean)?, cfg.window, cfg.variance_floor)?;
    let mut total = 0.0;
    for g in samples {
        check_same("akld", clean.shape(), g.shape())?;
        let g = local_moments(&g.sub(clean)?, cfg.window, cfg.variance_floor)?;
        let mut sum = 0.0;
        for i in 0..r.mean.len() {
            let (vr, vg) = (r.var[i], g.var[i]);
            let dm = r.mean[i] - g.mean[i];
            sum += 0.5 * (vg / vr).ln() + (vr + dm * dm) / (2.0 * vg) - 0.5;
        }
        total += sum / r.mean.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// [`akld_samples`] over `cfg.samples` draws from `generator`, called with the
/// sample index.
pub fn akld<F>(clean: &Tensor, real: &Tensor, cfg: &AkldConfig, mut generator: F) -> Result<f64>
where
    F: FnMut(usize) -> Result<Tensor>,
{
    cfg.validate()?;
    let samples = (0..cfg.samples).map(&mut generator).collect::<Result<Vec<_>>>()?;
    akld_samples(clean, real, &samples, cfg)
}
