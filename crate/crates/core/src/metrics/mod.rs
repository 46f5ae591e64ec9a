//! Noise-distribution metrics: local-Gaussian KL, PSNR, signal dependence,
//! spatial correlation and histogram divergence.

mod akld;
mod report;

pub use akld::{akld, akld_samples, local_moments, AkldConfig, LocalMoments};
pub use report::{Aggregate, MetricRecord, MetricReport};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{check_same, Tensor};

/// Peak signal-to-noise ratio in dB, capped at 99 for (near-)identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    check_same("psnr", a.shape(), b.shape())?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.numel().max(1) as f64;
    if mse < 1e-12 {
        return Ok(99.0);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Standard deviation of `noisy − clean` bucketed by clean intensity over
/// `[0, 1]`. Empty buckets are omitted.
pub fn noise_std_curve(clean: &Tensor, noisy: &Tensor, bins: usize) -> Result<Vec<(f64, f64)>> {
    check_same("noise_std_curve", clean.shape(), noisy.shape())?;
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); bins];
    for (c, n) in clean.data().iter().zip(noisy.data()) {
        let c = *c as f64;
        let i = ((c * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        let d = *n as f64 - c;
        acc[i].0 += 1;
        acc[i].1 += d;
        acc[i].2 += d * d;
    }
    Ok(acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(i, &(k, s, s2))| {
            let mean = s / k as f64;
            let var = (s2 / k as f64 - mean * mean).max(0.0);
            ((i as f64 + 0.5) / bins as f64, var.sqrt())
        })
        .collect())
}

/// Normalized cross-correlation of each plane with its `(dy, dx)` shift,
/// after removing the plane mean, averaged over batch and channels.
/// Constant planes carry no correlation information and are skipped.
pub fn spatial_autocorr(noise: &Tensor, lags: &[(isize, isize)]) -> Result<Vec<f64>> {
    let s = noise.shape();
    let (h, w) = (s.height() as isize, s.width() as isize);
    for &(dy, dx) in lags {
        if dy.abs() >= h || dx.abs() >= w {
            return Err(Error::InvalidArgument(format!("lag ({dy}, {dx}) exceeds the {h}x{w} image")));
        }
    }
    let planes: Vec<Vec<f64>> = noise
        .data()
        .chunks(s.plane())
        .map(|p| {
            let mean = p.iter().map(|v| *v as f64).sum::<f64>() / p.len() as f64;
            p.iter().map(|v| *v as f64 - mean).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(lags.len());
    for &(dy, dx) in lags {
        let (mut total, mut count) = (0.0, 0usize);
        for p in &planes {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for y in 0.max(-dy)..h.min(h - dy) {
                for x in 0.max(-dx)..w.min(w - dx) {
                    let a = p[(y * w + x) as usize];
                    let b = p[((y + dy) * w + x + dx) as usize];
                    ab += a * b;
                    aa += a * a;
                    bb += b * b;
                }
            }
            if aa > 0.0 && bb > 0.0 {
                total += ab / (aa * bb).sqrt();
                count += 1;
            }
        }
        out.push(if count == 0 { 0.0 } else { total / count as f64 });
    }
    Ok(out)
}

/// Smoothing mass added to every histogram bin.
pub const HISTOGRAM_EPS: f64 = 1e-6;

/// Discrete `KL(hist(a) ‖ hist(b))` over `bins` equal bins on `range`.
/// Values outside the range fall into the edge bins.
pub fn histogram_kl(a: &Tensor, b: &Tensor, bins: usize, range: (f64, f64)) -> Result<f64> {
    let (lo, hi) = range;
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidArgument(format!("degenerate histogram range {lo}..{hi}")));
    }
    let hist = |t: &Tensor| {
        let mut h = vec![0.0f64; bins];
        for v in t.data() {
            let f = (*v as f64 - lo) / (hi - lo) * bins as f64;
            let i = if f.is_nan() { 0 } else { (f.max(0.0) as usize).min(bins - 1) };
            h[i] += 1.0;
        }
        let n = t.numel().max(1) as f64;
        let z = 1.0 + bins as f64 * HISTOGRAM_EPS;
        h.iter().map(|c| (c / n + HISTOGRAM_EPS) / z).collect::<Vec<_>>()
    };
    let (p, q) = (hist(a), hist(b));
    Ok(p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>().max(0.0))
}

/// Per-image standard deviation of `noisy − clean`, averaged over the batch.
pub fn mean_noise_std(clean: &Tensor, noisy: &Tensor) -> Result<f64> {
    check_same("mean_noise_std", clean.shape(), noisy.shape())?;
    let n = clean.shape().batch();
    let mut total = 0.0;
    for b in 0..n {
        total += noisy.item(b).sub(&clean.item(b))?.variance().sqrt();
    }
    Ok(total / n.max(1) as f64)
}

/// `clean` plus white Gaussian noise whose variance matches the variance of
/// `real − clean`, image by image. The result is not clamped.
pub fn variance_matched_white<R: Rng + ?Sized>(clean: &Tensor, real: &Tensor, rng: &mut R) -> Result<Tensor> {
    check_same("variance_matched_white", clean.shape(), real.shape())?;
    let per = clean.shape().numel() / clean.shape().batch().max(1);
    let mut out = clean.clone();
    for b in 0..clean.shape().batch() {
        let sd = real.item(b).sub(&clean.item(b))?.variance().sqrt();
        for v in &mut out.data_mut()[b * per..(b + 1) * per] {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v as f64 + sd * z) as f32;
        }
    }
    Ok(out)
}
