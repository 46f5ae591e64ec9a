use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exposure brightness bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrightnessMode {
    Low,
    Normal,
    High,
}

impl BrightnessMode {
    pub const ALL: [BrightnessMode; 3] = [BrightnessMode::Low, BrightnessMode::Normal, BrightnessMode::High];

    pub fn index(self) -> usize {
        match self {
            BrightnessMode::Low => 0,
            BrightnessMode::Normal => 1,
            BrightnessMode::High => 2,
        }
    }
}

pub const COLOR_TEMP_MIN: f64 = 2000.0;
pub const COLOR_TEMP_MAX: f64 = 10000.0;

/// The capture conditions a noise sample is generated for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSettings {
    pub iso: f64,
    /// Exposure time in seconds.
    pub shutter_speed: f64,
    pub sensor_type: String,
    /// Kelvin; clamped to `[2000, 10000]` when encoded.
    pub color_temp: f64,
    pub brightness_mode: BrightnessMode,
}

impl CameraSettings {
    pub fn new(iso: f64, sensor_type: impl Into<String>) -> Self {
        CameraSettings {
            iso,
            shutter_speed: 0.01,
            sensor_type: sensor_type.into(),
            color_temp: 5500.0,
            brightness_mode: BrightnessMode::Normal,
        }
    }

    pub fn with_iso(&self, iso: f64) -> Self {
        CameraSettings { iso, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iso > 0.0 && self.iso.is_finite()) {
            return Err(Error::InvalidArgument(format!("iso must be positive, got {}", self.iso)));
        }
        if !(self.shutter_speed > 0.0 && self.shutter_speed.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "shutter speed must be positive, got {}",
                self.shutter_speed
            )));
        }
        if !self.color_temp.is_finite() {
            return Err(Error::InvalidArgument("color temperature must be finite".into()));
        }
        Ok(())
    }

    /// Raw (pre-MLP) feature vector: log-ISO, log-shutter, sensor one-hot,
    /// normalized Kelvin, brightness one-hot.
    pub fn raw_features(&self, vocab: &[String]) -> Result<Vec<f64>> {
        self.validate()?;
        let sensor = vocab
            .iter()
            .position(|s| *s == self.sensor_type)
            .ok_or_else(|| Error::UnknownSensor {
                name: self.sensor_type.clone(),
                known: vocab.to_vec(),
            })?;
        let mut f = Vec::with_capacity(raw_feature_len(vocab.len()));
        f.push((self.iso / 100.0).log2());
        f.push((self.shutter_speed * 1000.0).log2());
        f.extend((0..vocab.len()).map(|i| if i == sensor { 1.0 } else { 0.0 }));
        let ct = self.color_temp.clamp(COLOR_TEMP_MIN, COLOR_TEMP_MAX);
        f.push((ct - COLOR_TEMP_MIN) / (COLOR_TEMP_MAX - COLOR_TEMP_MIN));
        f.extend(BrightnessMode::ALL.iter().map(|&m| if m == self.brightness_mode { 1.0 } else { 0.0 }));
        Ok(f)
    }
}

pub fn raw_feature_len(vocab_len: usize) -> usize {
    2 + vocab_len + 1 + BrightnessMode::ALL.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn feature_layout() {
        let v = vocab(5);
        let mut cs = CameraSettings::new(100.0, "s2");
        cs.color_temp = 10000.0;
        let f = cs.raw_features(&v).unwrap();
        assert_eq!(f.len(), 11);
        assert_eq!(raw_feature_len(5), 11);
        assert_eq!(f[0], 0.0);
        assert!((f[1] - 10f64.log2()).abs() < 1e-12);
        assert_eq!(&f[2..7], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(f[7], 1.0);
        assert_eq!(&f[8..], &[0.0, 1.0, 0.0]);
        cs.color_temp = 2000.0;
        assert_eq!(cs.raw_features(&v).unwrap()[7], 0.0);
        cs.color_temp = 500.0;
        assert_eq!(cs.raw_features(&v).unwrap()[7], 0.0);
    }

    #[test]
    fn unknown_sensor_lists_vocabulary() {
        let err = CameraSettings::new(100.0, "nope").raw_features(&vocab(2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nope") && msg.contains("s0, s1"), "{msg}");
    }

    #[test]
    fn rejects_nonpositive_exposure() {
        assert!(CameraSettings::new(0.0, "s0").validate().is_err());
        let mut cs = CameraSettings::new(100.0, "s0");
        cs.shutter_speed = 0.0;
        assert!(cs.validate().is_err());
    }
}
