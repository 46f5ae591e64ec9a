use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial kernel applied by the pipeline before unsharp masking.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlurKernel {
    None,
    /// Normalized 3×3 mean.
    Box,
    /// Separable 3×3 Gaussian taps with the given sigma.
    Gaussian { sigma: f64 },
}

impl BlurKernel {
    /// The three separable taps, normalized to sum to one.
    pub fn taps(&self) -> Option<[f64; 3]> {
        match *self {
            BlurKernel::None => None,
            BlurKernel::Box => Some([1.0 / 3.0; 3]),
            BlurKernel::Gaussian { sigma } => {
                let e = (-1.0 / (2.0 * sigma * sigma)).exp();
                let z = 1.0 + 2.0 * e;
                Some([e / z, 1.0 / z, e / z])
            }
        }
    }
}

/// Noise and processing constants of one simulated camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub name: String,
    /// Read-noise std in linear units at ISO 100.
    pub read_sigma: f64,
    /// Shot-noise variance per unit signal at ISO 100.
    pub shot_k: f64,
    /// Row-major color matrix; every row sums to one.
    pub ccm: [[f64; 3]; 3],
    pub awb: [f64; 3],
    pub gamma: f64,
    pub sharpen_amount: f64,
    pub blur: BlurKernel,
    /// Exposure time at which the noise constants hold, in seconds.
    #[serde(default = "default_shutter_ref")]
    pub shutter_ref: f64,
}

fn default_shutter_ref() -> f64 {
    0.01
}

impl SensorProfile {
    /// Unit gains, identity color matrix, linear gamma, no spatial filtering.
    pub fn identity(name: &str, read_sigma: f64, shot_k: f64) -> Self {
        SensorProfile {
            name: name.into(),
            read_sigma,
            shot_k,
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            awb: [1.0; 3],
            gamma: 1.0,
            sharpen_amount: 0.0,
            blur: BlurKernel::None,
            shutter_ref: default_shutter_ref(),
        }
    }

    /// Full invariant check, applied to every loaded profile.
    pub fn validate(&self) -> Result<()> {
        self.check_processing()?;
        if self.read_sigma == 0.0 && self.shot_k == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "profile `{}`: read_sigma and shot_k cannot both be zero",
                self.name
            )));
        }
        Ok(())
    }

    /// Everything except the nonzero-noise requirement, so noiseless
    /// profiles can still drive the pipeline.
    pub fn check_processing(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("profile `{}`: {msg}", self.name)));
        for (i, row) in self.ccm.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return bad(format!("ccm row {i} sums to {s}, expected 1"));
            }
        }
        if self.ccm_inverse().is_none() {
            return bad("ccm is singular".into());
        }
        if self.awb.iter().any(|g| !(*g > 0.0)) {
            return bad(format!("awb gains must be positive, got {:?}", self.awb));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.read_sigma >= 0.0 && self.shot_k >= 0.0) {
            return bad("noise constants must be non-negative".into());
        }
        if !(self.sharpen_amount >= 0.0) {
            return bad(format!("sharpen_amount must be >= 0, got {}", self.sharpen_amount));
        }
        if let BlurKernel::Gaussian { sigma } = self.blur {
            if !(sigma > 0.0) {
                return bad(format!("blur sigma must be positive, got {sigma}"));
            }
        }
        if !(self.shutter_ref > 0.0) {
            return bad("shutter_ref must be positive".into());
        }
        Ok(())
    }

    pub fn ccm_inverse(&self) -> Option<[[f64; 3]; 3]> {
        let m = &self.ccm;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        if det.abs() < 1e-12 {
            return None;
        }
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        Some(adj.map(|row| row.map(|v| v / det)))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let p: SensorProfile = serde_json::from_str(text).map_err(|e| Error::Malformed {
            what: "sensor profile",
            path: path.into(),
            detail: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.into()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("profile serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// The two bundled camera models.
pub fn builtin_profiles() -> Vec<SensorProfile> {
    vec![
        SensorProfile {
            name: "sensorA".into(),
            read_sigma: 0.003,
            shot_k: 9.0e-6,
            ccm: [[1.55, -0.40, -0.15], [-0.25, 1.45, -0.20], [-0.05, -0.45, 1.50]],
            awb: [2.4, 1.0, 1.8],
            gamma: 2.2,
            sharpen_amount: 0.6,
            blur: BlurKernel::Gaussian { sigma: 0.6 },
            shutter_ref: 0.01,
        },
        SensorProfile {
            name: "sensorB".into(),
            read_sigma: 0.0042,
            shot_k: 1.8e-5,
            ccm: [[1.30, -0.20, -0.10], [-0.15, 1.25, -0.10], [-0.10, -0.30, 1.40]],
            awb: [1.6, 1.0, 2.3],
            gamma: 2.0,
            sharpen_amount: 0.4,
            blur: BlurKernel::Gaussian { sigma: 0.55 },
            shutter_ref: 0.01,
        },
    ]
}

pub fn builtin_profile(name: &str) -> Result<SensorProfile> {
    builtin_profiles()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownProfile(name.into()))
}
