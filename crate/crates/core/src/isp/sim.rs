use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::profile::SensorProfile;
use crate::error::{Error, Result};
use crate::model::CameraSettings;
use crate::numerics::{check_same, Tensor};

/// Per-pixel noise variance in linear units for signal `x`.
pub fn noise_variance(x: f64, settings: &CameraSettings, profile: &SensorProfile) -> f64 {
    let g = settings.iso / 100.0;
    let exposure = profile.shutter_ref / settings.shutter_speed;
    g * g * (profile.shot_k * x.max(0.0) + profile.read_sigma * profile.read_sigma) * exposure
}

/// Adds heteroscedastic Gaussian sensor noise to a linear image in `[0, 1]`.
pub fn raw_noise<R: Rng + ?Sized>(
    clean_linear: &Tensor,
    settings: &CameraSettings,
    profile: &SensorProfile,
    rng: &mut R,
) -> Result<Tensor> {
    settings.validate()?;
    if clean_linear.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("raw_noise input must lie in [0, 1]".into()));
    }
    let mut out = clean_linear.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        let sd = noise_variance(*v as f64, settings, profile).sqrt();
        *v = (*v as f64 + sd * z) as f32;
    }
    Ok(out)
}

fn mix_channels(t: &Tensor, m: &[[f64; 3]; 3]) -> Result<Tensor> {
    let s = t.shape();
    if s.channels() != 3 {
        return Err(Error::dim("isp", "channels", s.channels(), 3));
    }
    let plane = s.plane();
    let mut out = t.clone();
    for b in 0..s.batch() {
        let base = b * 3 * plane;
        for i in 0..plane {
            let px = [0, 1, 2].map(|c| t.data()[base + c * plane + i] as f64);
            for (c, row) in m.iter().enumerate() {
                out.data_mut()[base + c * plane + i] = (row[0] * px[0] + row[1] * px[1] + row[2] * px[2]) as f32;
            }
        }
    }
    Ok(out)
}

fn channel_gains(t: &Tensor, gains: [f64; 3]) -> Result<Tensor> {
    let m = [[gains[0], 0.0, 0.0], [0.0, gains[1], 0.0], [0.0, 0.0, gains[2]]];
    mix_channels(t, &m)
}

/// Separable 3-tap filter with replicated borders.
fn separable3(t: &Tensor, taps: [f64; 3]) -> Tensor {
    let s = t.shape();
    let (h, w) = (s.height(), s.width());
    let mut out = t.clone();
    let mut tmp = vec![0.0f64; h * w];
    for (src, dst) in t.data().chunks(s.plane()).zip(out.data_mut().chunks_mut(s.plane())) {
        for y in 0..h {
            for x in 0..w {
                let at = |xx: isize| src[y * w + xx.clamp(0, w as isize - 1) as usize] as f64;
                let x = x as isize;
                tmp[y * w + x as usize] = taps[0] * at(x - 1) + taps[1] * at(x) + taps[2] * at(x + 1);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let at = |yy: isize| tmp[yy.clamp(0, h as isize - 1) as usize * w + x];
                let yi = y as isize;
                dst[y * w + x] = (taps[0] * at(yi - 1) + taps[1] * at(yi) + taps[2] * at(yi + 1)) as f32;
            }
        }
    }
    out
}

/// AWB gains, color matrix, blur plus unsharp mask, clamp, then gamma encoding.
pub fn isp_pipeline(raw: &Tensor, profile: &SensorProfile) -> Result<Tensor> {
    profile.check_processing()?;
    let mut x = channel_gains(raw, profile.awb)?;
    x = mix_channels(&x, &profile.ccm)?;
    if let Some(taps) = profile.blur.taps() {
        let blurred = separable3(&x, taps);
        x = if profile.sharpen_amount > 0.0 {
            let twice = separable3(&blurred, taps);
            blurred.axpby(1.0 + profile.sharpen_amount, &twice, -profile.sharpen_amount)?
        } else {
            blurred
        };
    }
    let inv = 1.0 / profile.gamma;
    Ok(x.map(|v| (v.clamp(0.0, 1.0) as f64).powf(inv) as f32))
}

/// Approximate inverse of the color stages: gamma decode, inverse color
/// matrix, inverse gains, clamped to `[0, 1]`. Spatial filtering is not undone.
pub fn unprocess(srgb: &Tensor, profile: &SensorProfile) -> Result<Tensor> {
    profile.check_processing()?;
    let inv_ccm = profile.ccm_inverse().expect("validated ccm is invertible");
    let lin = srgb.map(|v| (v.clamp(0.0, 1.0) as f64).powf(profile.gamma) as f32);
    let x = mix_channels(&lin, &inv_ccm)?;
    let x = channel_gains(&x, profile.awb.map(|g| 1.0 / g))?;
    Ok(x.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyPair {
    pub clean: Tensor,
    pub noisy: Tensor,
    pub settings: CameraSettings,
    pub profile_name: String,
}

/// Simulates one capture of `clean_srgb`. Both images of the pair go through
/// the same pipeline, so they differ only by the processed sensor noise.
pub fn make_noisy_pair<R: Rng + ?Sized>(
    clean_srgb: &Tensor,
    settings: &CameraSettings,
    profile: &SensorProfile,
    rng: &mut R,
) -> Result<NoisyPair> {
    if clean_srgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("clean image must lie in [0, 1]".into()));
    }
    let raw = unprocess(clean_srgb, profile)?;
    let noisy_raw = raw_noise(&raw, settings, profile, rng)?;
    let clean = isp_pipeline(&raw, profile)?;
    let noisy = isp_pipeline(&noisy_raw, profile)?;
    check_same("make_noisy_pair", clean.shape(), noisy.shape())?;
    Ok(NoisyPair {
        clean,
        noisy,
        settings: settings.clone(),
        profile_name: profile.name.clone(),
    })
}

/// [`make_noisy_pair`] with the profile named by `settings.sensor_type`.
pub fn simulate<R: Rng + ?Sized>(
    clean_srgb: &Tensor,
    settings: &CameraSettings,
    profiles: &[SensorProfile],
    rng: &mut R,
) -> Result<NoisyPair> {
    let profile = profiles
        .iter()
        .find(|p| p.name == settings.sensor_type)
        .ok_or_else(|| Error::UnknownProfile(settings.sensor_type.clone()))?;
    make_noisy_pair(clean_srgb, settings, profile, rng)
}
