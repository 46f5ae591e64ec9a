//! Conditioned noise predictor and its camera-settings encoding.

mod camera;
mod config;
mod params;
mod unet;

pub use camera::{raw_feature_len, BrightnessMode, CameraSettings, COLOR_TEMP_MAX, COLOR_TEMP_MIN};
pub use config::{ModelConfig, MODULATED_BLOCKS, SCALES};
pub use params::{Bound, Parameters};
pub use unet::{sinusoidal_embed, EpsModel, NoiseModel};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradcheck::check_op;
    use crate::numerics::{Activation, Shape, Tape, Tensor};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn model(seed: u64) -> NoiseModel {
        NoiseModel::init(ModelConfig::default(), &mut rng(seed)).unwrap()
    }

    /// Replaces the zero-initialized heads with small random values.
    fn randomize_heads<T: crate::numerics::Real>(m: &mut NoiseModel<T>, seed: u64) {
        let mut r = rng(seed);
        for (name, t) in m.params_mut().iter_mut() {
            if name.contains(".film.gamma") || name.contains(".film.beta") || name.ends_with(".bias") {
                *t = Tensor::uniform(t.shape(), -0.2, 0.2, &mut r);
            }
        }
    }

    fn cs(iso: f64) -> CameraSettings {
        CameraSettings::new(iso, "sensorA")
    }

    #[test]
    fn sinusoid_examples() {
        let zero = sinusoidal_embed(0.0, 8).unwrap();
        assert_eq!(zero.len(), 8);
        for pair in zero.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let one = sinusoidal_embed(1.0, 32).unwrap();
        assert_eq!(one.len(), 32);
        assert!((one[0] - 0.841_471).abs() < 1e-6);
        // Lowest frequency is 1/10000.
        assert!((one[30] - (1e-4f64).sin()).abs() < 1e-12);
        assert!(sinusoidal_embed(1.0, 7).is_err());
    }

    #[test]
    fn tccam_starts_as_identity() {
        let m = model(1);
        for (layer, mult) in MODULATED_BLOCKS {
            let (g, b) = m.tccam_values(37, &cs(800.0), layer).unwrap();
            assert_eq!(g.len(), mult * 16);
            assert_eq!(b.len(), mult * 16);
            assert!(g.iter().all(|&v| v == 1.0));
            assert!(b.iter().all(|&v| v == 0.0));
        }
        assert!(m.tccam_values(1, &cs(100.0), "nope").is_err());
    }

    #[test]
    fn tccam_affine_gradcheck() {
        let cfg = ModelConfig::default();
        for seed in 0..20 {
            let mut r = rng(40 + seed);
            let e = cfg.cs_embed_dim;
            let h = cfg.mlp_hidden;
            let c = 16;
            let inputs = vec![
                Tensor::<f64>::randn(Shape::matrix(2, e), &mut r).scale(0.5),
                Tensor::randn(Shape::matrix(h, e), &mut r).scale(0.2),
                Tensor::randn(Shape::vector(h), &mut r).scale(0.5),
                Tensor::randn(Shape::matrix(c, h), &mut r).scale(0.2),
                Tensor::randn(Shape::vector(c), &mut r),
                Tensor::randn(Shape::matrix(c, h), &mut r).scale(0.2),
                Tensor::randn(Shape::vector(c), &mut r),
                Tensor::randn(Shape::new(2, c, 3, 3), &mut r),
            ];
            let m = NoiseModel::<f64>::init(cfg.clone(), &mut r).unwrap();
            let err = check_op(&inputs, seed, |tape: &mut Tape<f64>, v| {
                let names = ["hidden.weight", "hidden.bias", "gamma.weight", "gamma.bias", "beta.weight", "beta.bias"];
                let bound = Bound::from_vars(names.iter().zip(&v[1..7]).map(|(n, var)| (format!("enc1.film.{n}"), *var)));
                let act = tape.activation(v[0], Activation::Silu);
                let (g, b) = m.tccam(tape, &bound, act, "enc1")?;
                tape.apply_affine(v[7], g, b)
            });
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn mcam_shapes_and_zero_image() {
        let mut m = model(2);
        let mut tape = Tape::inference();
        let bound = m.params().bind(&mut tape, false);
        let s = tape.constant(Tensor::randn(Shape::new(1, 3, 16, 16), &mut rng(3)));
        let f = m.mcam_features(&mut tape, &bound, s).unwrap();
        assert_eq!(tape.shape(f[0]), Shape::new(1, 16, 16, 16));
        assert_eq!(tape.shape(f[1]), Shape::new(1, 32, 8, 8));
        assert_eq!(tape.shape(f[2]), Shape::new(1, 64, 4, 4));

        let bad = tape.constant(Tensor::zeros(Shape::new(1, 3, 10, 16)));
        assert!(m.mcam_features(&mut tape, &bound, bad).is_err());

        for (name, t) in m.params_mut().iter_mut() {
            if name.ends_with(".bias") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let mut tape = Tape::inference();
        let bound = m.params().bind(&mut tape, false);
        let z = tape.constant(Tensor::zeros(Shape::new(1, 3, 16, 16)));
        for f in m.mcam_features(&mut tape, &bound, z).unwrap() {
            assert!(tape.value(f).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn clean_and_noisy_encoders_do_not_share_weights() {
        let m = model(4);
        let mut tape = Tape::inference();
        let bound = m.params().bind(&mut tape, false);
        let img = tape.constant(Tensor::randn(Shape::new(1, 3, 16, 16), &mut rng(5)));
        let cond = m.condition(&mut tape, &bound, &[10], &[cs(100.0)]).unwrap();
        let act = tape.activation(cond, Activation::Silu);
        let fs = m.mcam_features(&mut tape, &bound, img).unwrap();
        let fx = m.xt_features(&mut tape, &bound, img, act).unwrap();
        for (a, b) in fs.iter().zip(&fx) {
            assert_ne!(tape.value(*a), tape.value(*b));
        }
    }

    #[test]
    fn eps_shape_and_determinism() {
        let m = model(6);
        let mut r = rng(7);
        let x = Tensor::randn(Shape::new(1, 3, 16, 16), &mut r);
        let s = Tensor::randn(Shape::new(1, 3, 16, 16), &mut r);
        let a = m.predict(&x, &[12], &s, &[cs(100.0)]).unwrap();
        let b = m.predict(&x, &[12], &s, &[cs(100.0)]).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, b);
        assert!(a.all_finite());

        let wrong = Tensor::randn(Shape::new(1, 3, 10, 16), &mut r);
        assert!(m.predict(&wrong, &[1], &wrong, &[cs(100.0)]).is_err());
        assert!(m.predict(&x, &[1, 2], &s, &[cs(100.0)]).is_err());
        let mut unknown = cs(100.0);
        unknown.sensor_type = "sensorZ".into();
        assert!(matches!(
            m.predict(&x, &[1], &s, &[unknown]),
            Err(crate::Error::UnknownSensor { .. })
        ));
    }

    #[test]
    fn untrained_output_ignores_step_and_camera() {
        let m = model(8);
        let mut r = rng(9);
        let x = Tensor::randn(Shape::new(1, 3, 8, 8), &mut r);
        let s = Tensor::randn(Shape::new(1, 3, 8, 8), &mut r);
        let a = m.predict(&x, &[3], &s, &[cs(100.0)]).unwrap();
        let mut other = CameraSettings::new(3200.0, "sensorB");
        other.shutter_speed = 0.25;
        other.brightness_mode = BrightnessMode::Low;
        let b = m.predict(&x, &[150], &s, &[other]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn modulated_output_depends_on_camera() {
        let mut m = model(10);
        randomize_heads(&mut m, 11);
        let mut r = rng(12);
        let x = Tensor::randn(Shape::new(1, 3, 8, 8), &mut r);
        let s = Tensor::randn(Shape::new(1, 3, 8, 8), &mut r);
        let a = m.predict(&x, &[3], &s, &[cs(100.0)]).unwrap();
        let b = m.predict(&x, &[3], &s, &[cs(3200.0)]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn parameter_count_is_locked() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.parameter_count(), 495_763);
        assert_eq!(model(0).params().numel(), 495_763);
        assert_eq!(model(0).params().len(), cfg.manifest().len());
    }
}
