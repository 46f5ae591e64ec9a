//! Files: float tensors, checkpoints, dataset manifests and run configs.

mod checkpoint;
mod config;
mod manifest;
mod tensor_file;

pub use checkpoint::{Checkpoint, ScheduleEcho, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DistillConfig, RunConfig, SamplerConfig, ScheduleConfig, TrainConfig};
pub use manifest::{Dataset, DatasetManifest, Scene, Splits, MANIFEST_VERSION};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC};

#[cfg(test)]
mod tests {
    use std::path::{Path, PathBuf};

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffusion::{AdamState, DiffusionSchedule};
    use crate::model::{CameraSettings, ModelConfig, Parameters};
    use crate::numerics::{Shape, Tensor};
    use crate::Error;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn tensor_file_round_trip() {
        let t = Tensor::randn(Shape::new(2, 3, 4, 5), &mut rng(1));
        let bytes = encode_tensor(&t);
        assert_eq!(&bytes[..4], b"NGF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 8 + 16 + 4 * 120);
        assert_eq!(decode_tensor(&bytes, Path::new("x")).unwrap(), t);

        // A rank-2 file has the 16-byte header.
        let mut small = b"NGF1".to_vec();
        for w in [2u32, 1, 2] {
            small.extend_from_slice(&w.to_le_bytes());
        }
        assert_eq!(small.len(), 16);
        small.extend_from_slice(&1.5f32.to_le_bytes());
        small.extend_from_slice(&(-2.0f32).to_le_bytes());
        let m = decode_tensor(&small, Path::new("x")).unwrap();
        assert_eq!(m.shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(m.data(), &[1.5, -2.0]);

        assert!(matches!(decode_tensor(b"NGF2\0\0\0\0", Path::new("x")), Err(Error::Malformed { .. })));
        assert!(decode_tensor(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(matches!(read_tensor(Path::new("/nonexistent/a.f32")), Err(Error::MissingFile(_))));
    }

    fn checkpoint(full: bool) -> Checkpoint {
        let config = ModelConfig::default();
        let params = Parameters::init(&config, &mut rng(2));
        let schedule = ScheduleEcho::of(&DiffusionSchedule::scaled_linear(200).unwrap());
        let mut adam = AdamState::new(&params);
        adam.step = 17;
        adam.m = Parameters::init(&config, &mut rng(3));
        Checkpoint {
            ema: full.then(|| Parameters::init(&config, &mut rng(4))),
            psi: full.then(|| params.clone()),
            adam: full.then_some(adam),
            config,
            schedule,
            params,
            step: 42,
            seed: 7,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for full in [false, true] {
            let ck = checkpoint(full);
            let path = dir.path().join("a.ckpt");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.encode(), std::fs::read(&path).unwrap());
            assert_eq!(back.schedule.build().unwrap(), DiffusionSchedule::scaled_linear(200).unwrap());
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let ck = checkpoint(true);
        let bytes = ck.encode();
        let p = Path::new("c.ckpt");
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3], p).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::decode(&wrong, p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra, p).is_err());

        let mut missing = ck.clone();
        let name = missing.params.names().next().unwrap().to_owned();
        missing.params.insert(name, Tensor::zeros(Shape::vector(3)));
        assert!(Checkpoint::decode(&missing.encode(), p).is_err());

        let other = ModelConfig {
            sensor_vocab: vec!["sensorA".into(), "sensorC".into()],
            ..ModelConfig::default()
        };
        assert!(ck.check_config(&other).is_err());
        assert!(ck.check_config(&ModelConfig::default()).is_ok());
    }

    fn write_scene(dir: &Path, id: &str, noisy: usize) -> Scene {
        let t = Tensor::uniform(Shape::new(1, 3, 4, 4), 0.0, 1.0, &mut rng(5));
        let clean = PathBuf::from(format!("{id}_clean.f32"));
        write_tensor(&dir.join(&clean), &t).unwrap();
        let noisy_paths = (0..noisy)
            .map(|k| {
                let p = PathBuf::from(format!("{id}_noisy{k}.f32"));
                write_tensor(&dir.join(&p), &t).unwrap();
                p
            })
            .collect();
        Scene {
            scene_id: id.into(),
            clean_path: clean,
            noisy_paths,
            settings: CameraSettings::new(800.0, "sensorA"),
            profile_name: "sensorA".into(),
        }
    }

    #[test]
    fn manifest_loading() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = ModelConfig::default().sensor_vocab;
        let path = dir.path().join("manifest.json");

        Dataset::save(&DatasetManifest::new(vec![], Splits::default(), None), &path).unwrap();
        assert!(Dataset::load(&path, &vocab).unwrap().manifest.scenes.is_empty());

        let scenes: Vec<Scene> = (0..4).map(|i| write_scene(dir.path(), &format!("s{i}"), 1)).collect();
        let splits = Splits {
            train: vec!["s0".into(), "s1".into(), "s2".into()],
            val: vec!["s3".into()],
        };
        let m = DatasetManifest::new(scenes.clone(), splits.clone(), Some(3));
        Dataset::save(&m, &path).unwrap();
        let ds = Dataset::load(&path, &vocab).unwrap();
        assert_eq!(ds.split("train").unwrap().len(), 3);
        assert_eq!(ds.split("val").unwrap().len(), 1);
        let s0 = ds.scene("s0").unwrap();
        assert_eq!(ds.load_clean(s0).unwrap(), ds.load_noisy(s0, 0).unwrap());
        assert!(ds.load_noisy(s0, 1).is_err());

        std::fs::remove_file(dir.path().join("s2_noisy0.f32")).unwrap();
        match Dataset::load(&path, &vocab) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("s2_noisy0.f32")),
            other => panic!("{other:?}"),
        }

        let mut unknown = m.clone();
        unknown.scenes[0].settings.sensor_type = "sensorQ".into();
        Dataset::save(&unknown, &path).unwrap();
        assert!(matches!(Dataset::load(&path, &vocab), Err(Error::UnknownSensor { .. })));

        let mut overlap = m.clone();
        overlap.splits.val.push("s0".into());
        assert!(overlap.validate(&vocab, &path).is_err());
        let mut dup = m.clone();
        dup.scenes[1].scene_id = "s0".into();
        assert!(dup.validate(&vocab, &path).is_err());

        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(Dataset::load(&path, &vocab), Err(Error::Malformed { .. })));
        assert!(matches!(
            Dataset::load(&dir.path().join("none.json"), &vocab),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn run_config_defaults_and_validation() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.schedule.steps, 200);
        assert_eq!(cfg.train.accumulation, 2);
        assert_eq!(cfg.train.ema_decay, 0.995);
        assert_eq!(cfg.train.adam.lr, 8e-5);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 9, "train": {"iterations": 3}}"#).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.train.iterations, 3);
        assert_eq!(loaded.train.batch_size, 16);

        let mut bad = cfg.clone();
        bad.sampler.steps = 1;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.train.crop = 10;
        assert!(bad.validate().is_err());
        std::fs::write(&path, r#"{"seed": "x"}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Malformed { .. })));
    }
}
