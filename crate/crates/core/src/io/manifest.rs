use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor_file::read_tensor;
use crate::error::{Error, Result};
use crate::model::CameraSettings;
use crate::numerics::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

/// One clean image with its simulated or captured noisy counterparts.
/// Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub clean_path: PathBuf,
    pub noisy_paths: Vec<PathBuf>,
    pub settings: CameraSettings,
    pub profile_name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub scenes: Vec<Scene>,
    pub splits: Splits,
    /// Seed of the run that wrote the manifest, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn new(scenes: Vec<Scene>, splits: Splits, seed: Option<u64>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            scenes,
            splits,
            seed,
        }
    }

    /// Checks ids, splits and sensor names. File existence is checked by
    /// [`Dataset::load`].
    pub fn validate(&self, sensor_vocab: &[String], path: &Path) -> Result<()> {
        let bad = |detail: String| Error::Malformed {
            what: "manifest",
            path: path.into(),
            detail,
        };
        if self.version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let mut ids = HashSet::new();
        for s in &self.scenes {
            if !ids.insert(s.scene_id.as_str()) {
                return Err(bad(format!("duplicate scene id `{}`", s.scene_id)));
            }
            if !sensor_vocab.contains(&s.settings.sensor_type) {
                return Err(Error::UnknownSensor {
                    name: s.settings.sensor_type.clone(),
                    known: sensor_vocab.to_vec(),
                });
            }
            s.settings.validate().map_err(|e| bad(format!("scene `{}`: {e}", s.scene_id)))?;
        }
        let train: HashSet<&str> = self.splits.train.iter().map(String::as_str).collect();
        for id in self.splits.train.iter().chain(&self.splits.val) {
            if !ids.contains(id.as_str()) {
                return Err(bad(format!("split references unknown scene `{id}`")));
            }
        }
        if let Some(id) = self.splits.val.iter().find(|id| train.contains(id.as_str())) {
            return Err(bad(format!("scene `{id}` is in both train and val")));
        }
        Ok(())
    }
}

/// A validated manifest plus the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(manifest_path: &Path, sensor_vocab: &[String]) -> Result<Self> {
        if !manifest_path.exists() {
            return Err(Error::MissingFile(manifest_path.into()));
        }
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            what: "manifest",
            path: manifest_path.into(),
            detail: e.to_string(),
        })?;
        manifest.validate(sensor_vocab, manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        for s in &manifest.scenes {
            for p in std::iter::once(&s.clean_path).chain(&s.noisy_paths) {
                let full = root.join(p);
                if !full.exists() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(Dataset { manifest, root })
    }

    pub fn save(manifest: &DatasetManifest, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn scene(&self, id: &str) -> Result<&Scene> {
        self.manifest
            .scenes
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no scene `{id}`")))
    }

    pub fn split(&self, name: &str) -> Result<Vec<&Scene>> {
        let ids = match name {
            "train" => &self.manifest.splits.train,
            "val" => &self.manifest.splits.val,
            other => return Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        };
        ids.iter().map(|id| self.scene(id)).collect()
    }

    pub fn load_clean(&self, scene: &Scene) -> Result<Tensor> {
        read_tensor(&self.root.join(&scene.clean_path))
    }

    pub fn load_noisy(&self, scene: &Scene, k: usize) -> Result<Tensor> {
        let p = scene
            .noisy_paths
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("scene `{}` has no noisy image {k}", scene.scene_id)))?;
        read_tensor(&self.root.join(p))
    }
}
