use serde::{Deserialize, Serialize};

use super::camera::raw_feature_len;
use crate::error::{Error, Result};
use crate::numerics::Shape;

/// Number of resolution stages in the denoiser. The clean-image injection
/// is defined for exactly three.
pub const SCALES: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub scales: usize,
    pub time_embed_dim: usize,
    pub cs_embed_dim: usize,
    /// Width of the hidden layers in the conditioning MLPs.
    pub mlp_hidden: usize,
    pub sensor_vocab: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 16,
            scales: SCALES,
            time_embed_dim: 32,
            cs_embed_dim: 32,
            mlp_hidden: 64,
            sensor_vocab: vec!["sensorA".into(), "sensorB".into()],
        }
    }
}

/// Blocks whose output is modulated by a per-layer affine head, with their
/// channel widths expressed as multiples of `base_channels`.
pub const MODULATED_BLOCKS: [(&str, usize); 7] = [
    ("enc1", 1),
    ("enc2", 2),
    ("enc3", 4),
    ("mid", 4),
    ("dec3", 4),
    ("dec2", 2),
    ("dec1", 1),
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales != SCALES {
            return Err(Error::InvalidArgument(format!(
                "model scales must be {SCALES}, got {}",
                self.scales
            )));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "time_embed_dim must be even and positive, got {}",
                self.time_embed_dim
            )));
        }
        if self.base_channels == 0 || self.cs_embed_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if self.sensor_vocab.is_empty() {
            return Err(Error::InvalidArgument("sensor vocabulary is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.sensor_vocab.iter().find(|s| !seen.insert(*s)) {
            return Err(Error::InvalidArgument(format!("duplicate sensor `{dup}` in vocabulary")));
        }
        Ok(())
    }

    /// Channel widths of the three stages.
    pub fn widths(&self) -> [usize; SCALES] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b]
    }

    pub fn raw_camera_len(&self) -> usize {
        raw_feature_len(self.sensor_vocab.len())
    }

    /// Every parameter of the architecture with its shape, in a fixed order.
    pub fn manifest(&self) -> Vec<(String, Shape)> {
        let [c1, c2, c3] = self.widths();
        let h = self.mlp_hidden;
        let e = self.cs_embed_dim;
        let mut m = Vec::new();
        let conv = |m: &mut Vec<(String, Shape)>, name: &str, out_c: usize, in_c: usize| {
            m.push((format!("{name}.weight"), Shape::new(out_c, in_c, 3, 3)));
            m.push((format!("{name}.bias"), Shape::vector(out_c)));
        };
        for prefix in ["x", "s"] {
            conv(&mut m, &format!("{prefix}enc.stem"), c1, 3);
            for (stage, (out_c, in_c)) in [(c1, c1), (c2, c1), (c3, c2)].into_iter().enumerate() {
                let block = format!("{prefix}enc{}", stage + 1);
                conv(&mut m, &format!("{block}.conv1"), out_c, in_c);
                conv(&mut m, &format!("{block}.conv2"), out_c, out_c);
            }
        }
        conv(&mut m, "mid.conv1", c3, c3);
        conv(&mut m, "mid.conv2", c3, c3);
        conv(&mut m, "dec3.conv1", c3, 3 * c3);
        conv(&mut m, "dec3.conv2", c3, c3);
        conv(&mut m, "dec2.conv1", c2, c3 + 2 * c2);
        conv(&mut m, "dec2.conv2", c2, c2);
        conv(&mut m, "dec1.conv1", c1, c2 + 2 * c1);
        conv(&mut m, "dec1.conv2", c1, c1);
        conv(&mut m, "out", 3, c1);

        let linear = |m: &mut Vec<(String, Shape)>, name: &str, out_f: usize, in_f: usize| {
            m.push((format!("{name}.weight"), Shape::matrix(out_f, in_f)));
            m.push((format!("{name}.bias"), Shape::vector(out_f)));
        };
        for (mlp, input) in [("time", self.time_embed_dim), ("camera", self.raw_camera_len())] {
            linear(&mut m, &format!("{mlp}.fc1"), h, input);
            linear(&mut m, &format!("{mlp}.fc2"), h, h);
            linear(&mut m, &format!("{mlp}.fc3"), e, h);
        }
        for (block, mult) in MODULATED_BLOCKS {
            let c = mult * self.base_channels;
            linear(&mut m, &format!("{block}.film.hidden"), h, e);
            linear(&mut m, &format!("{block}.film.gamma"), c, h);
            linear(&mut m, &format!("{block}.film.beta"), c, h);
        }
        m
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest().iter().map(|(_, s)| s.numel()).sum()
    }
}
