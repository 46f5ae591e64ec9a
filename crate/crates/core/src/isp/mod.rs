//! Camera simulator: heteroscedastic sensor noise followed by a small ISP.

mod profile;
mod sim;

pub use profile::{builtin_profile, builtin_profiles, BlurKernel, SensorProfile};
pub use sim::{isp_pipeline, make_noisy_pair, noise_variance, raw_noise, simulate, unprocess, NoisyPair};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::metrics::{noise_std_curve, spatial_autocorr};
    use crate::model::CameraSettings;
    use crate::numerics::{Shape, Tensor};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cs(iso: f64) -> CameraSettings {
        CameraSettings::new(iso, "sensorA")
    }

    fn linear(read: f64, shot: f64) -> SensorProfile {
        SensorProfile::identity("plain", read, shot)
    }

    fn noise_var(clean: &Tensor, noisy: &Tensor) -> f64 {
        noisy.sub(clean).unwrap().variance()
    }

    #[test]
    fn dark_pixels_without_read_noise_are_exact() {
        let mut x = Tensor::full(Shape::new(1, 3, 4, 4), 0.5f32);
        x.data_mut()[5] = 0.0;
        let y = raw_noise(&x, &cs(800.0), &linear(0.0, 0.01), &mut rng(1)).unwrap();
        assert_eq!(y.data()[5], 0.0);
        assert_ne!(y.data()[6], 0.5);
    }

    #[test]
    fn raw_variance_matches_closed_form() {
        let x = Tensor::full(Shape::vector(100_000), 0.25f32);
        let p = linear(0.01, 0.01);
        let y = raw_noise(&x, &cs(100.0), &p, &mut rng(2)).unwrap();
        let v = noise_var(&x, &y);
        assert!((v / 0.0026 - 1.0).abs() < 0.05, "{v}");
        assert!((noise_variance(0.25, &cs(100.0), &p) - 0.0026).abs() < 1e-15);

        let y2 = raw_noise(&x, &cs(200.0), &p, &mut rng(3)).unwrap();
        let ratio = noise_var(&x, &y2) / v;
        assert!((ratio / 4.0 - 1.0).abs() < 0.1, "{ratio}");

        // Halving the exposure doubles the variance.
        let mut slow = cs(100.0);
        slow.shutter_speed = 0.005;
        assert!((noise_variance(0.25, &slow, &p) - 0.0052).abs() < 1e-15);

        let bad = Tensor::full(Shape::vector(2), 1.5f32);
        assert!(raw_noise(&bad, &cs(100.0), &p, &mut rng(4)).is_err());
    }

    #[test]
    fn identity_pipeline_only_clamps() {
        let p = linear(0.01, 0.0);
        let x = Tensor::new(Shape::new(1, 3, 1, 2), vec![-0.5, 0.2, 0.4, 1.7, 0.9, 0.0]).unwrap();
        let y = isp_pipeline(&x, &p).unwrap();
        assert_eq!(y.data(), &[0.0, 0.2, 0.4, 1.0, 0.9, 0.0]);
    }

    #[test]
    fn gamma_on_constant_image() {
        let mut p = linear(0.01, 0.0);
        p.gamma = 2.2;
        let y = isp_pipeline(&Tensor::full(Shape::new(1, 3, 2, 2), 0.5f32), &p).unwrap();
        for v in y.data() {
            assert!((*v as f64 - 0.72974).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn box_blur_correlates_neighbours() {
        let mut p = linear(0.01, 0.0);
        p.blur = BlurKernel::Box;
        let mut r = rng(5);
        let white = Tensor::randn(Shape::new(1, 3, 128, 128), &mut r).scale(0.05).map(|v| v + 0.5);
        let y = isp_pipeline(&white, &p).unwrap();
        let c = spatial_autocorr(&y, &[(0, 1), (1, 0)]).unwrap();
        for v in c {
            assert!((v - 2.0 / 3.0).abs() < 0.03, "{v}");
        }
    }

    #[test]
    fn gaussian_taps_are_normalized() {
        let t = BlurKernel::Gaussian { sigma: 0.85 }.taps().unwrap();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t[1] > t[0] && t[0] == t[2]);
        assert!(BlurKernel::None.taps().is_none());
    }

    #[test]
    fn noiseless_pair_is_identical() {
        let mut p = builtin_profile("sensorA").unwrap();
        p.read_sigma = 0.0;
        p.shot_k = 0.0;
        let mut r = rng(6);
        let clean = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut r);
        let pair = make_noisy_pair(&clean, &cs(3200.0), &p, &mut r).unwrap();
        assert_eq!(pair.clean, pair.noisy);

        // Without spatial filtering the color stages invert as well.
        p.blur = BlurKernel::None;
        let mid = Tensor::uniform(clean.shape(), 0.3, 0.6, &mut r);
        let pair = make_noisy_pair(&mid, &cs(100.0), &p, &mut r).unwrap();
        assert!(pair.noisy.sub(&mid).unwrap().max_abs() < 1e-5);
    }

    #[test]
    fn pairs_are_deterministic_and_grow_with_iso() {
        let clean = Tensor::uniform(Shape::new(1, 3, 32, 32), 0.1, 0.9, &mut rng(7));
        let p = builtin_profile("sensorA").unwrap();
        let a = make_noisy_pair(&clean, &cs(800.0), &p, &mut rng(8)).unwrap();
        let b = make_noisy_pair(&clean, &cs(800.0), &p, &mut rng(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.noisy, a.clean);
        let lo = make_noisy_pair(&clean, &cs(100.0), &p, &mut rng(9)).unwrap();
        let hi = make_noisy_pair(&clean, &cs(3200.0), &p, &mut rng(9)).unwrap();
        assert!(noise_var(&hi.clean, &hi.noisy) > noise_var(&lo.clean, &lo.noisy));
        assert!(simulate(&clean, &CameraSettings::new(100.0, "nope"), &builtin_profiles(), &mut rng(1)).is_err());
    }

    #[test]
    fn noise_grows_with_intensity() {
        let mut r = rng(10);
        let clean = Tensor::uniform(Shape::new(1, 3, 200, 200), 0.0, 1.0, &mut r);
        let y = raw_noise(&clean, &cs(800.0), &linear(0.0, 1e-3), &mut r).unwrap();
        let curve = noise_std_curve(&clean, &y, 10).unwrap();
        assert_eq!(curve.len(), 10);
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1, "{curve:?}");
        }
    }

    #[test]
    fn builtin_noise_is_spatially_correlated() {
        let mut r = rng(11);
        let clean = Tensor::uniform(Shape::new(4, 3, 32, 32), 0.2, 0.8, &mut r);
        for p in builtin_profiles() {
            let pair = make_noisy_pair(&clean, &cs(800.0), &p, &mut r).unwrap();
            let noise = pair.noisy.sub(&pair.clean).unwrap();
            let c = spatial_autocorr(&noise, &[(0, 1)]).unwrap()[0];
            assert!(c > 0.2, "{}: {c}", p.name);
            let white = Tensor::randn(noise.shape(), &mut r).scale(noise.variance().sqrt() as f32);
            assert!(spatial_autocorr(&white, &[(0, 1)]).unwrap()[0].abs() < 0.05);
        }
    }

    #[test]
    fn profiles_are_distinguishable() {
        let clean = Tensor::full(Shape::new(1, 3, 64, 64), 0.5f32);
        let var = |name: &str| {
            let pair = make_noisy_pair(&clean, &cs(800.0), &builtin_profile(name).unwrap(), &mut rng(12)).unwrap();
            let n = pair.noisy.sub(&pair.clean).unwrap();
            (0..3)
                .map(|c| {
                    let plane: Vec<f32> = n.data()[c * 4096..(c + 1) * 4096].to_vec();
                    Tensor::new(Shape::vector(4096), plane).unwrap().variance()
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (var("sensorA"), var("sensorB"));
        for c in 0..3 {
            assert!((a[c] / b[c] - 1.0).abs() > 0.2, "channel {c}: {} vs {}", a[c], b[c]);
        }
    }

    #[test]
    fn profile_validation_and_json() {
        for p in builtin_profiles() {
            p.validate().unwrap();
            let inv = p.ccm_inverse().unwrap();
            for row in inv {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let base = builtin_profile("sensorB").unwrap();
        let mut p = base.clone();
        p.ccm[0][0] += 0.1;
        assert!(p.validate().is_err());
        let mut p = base.clone();
        p.awb[1] = 0.0;
        assert!(p.validate().is_err());
        let mut p = base.clone();
        p.gamma = 0.0;
        assert!(p.validate().is_err());
        let mut p = base.clone();
        p.read_sigma = 0.0;
        p.shot_k = 0.0;
        assert!(p.validate().is_err());
        assert!(p.check_processing().is_ok());
        assert!(matches!(builtin_profile("x"), Err(crate::Error::UnknownProfile(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.json");
        base.save(&path).unwrap();
        assert_eq!(SensorProfile::load(&path).unwrap(), base);
        std::fs::write(&path, "{\"name\": 3}").unwrap();
        assert!(matches!(SensorProfile::load(&path), Err(crate::Error::Malformed { .. })));
        assert!(matches!(
            SensorProfile::load(&dir.path().join("missing.json")),
            Err(crate::Error::MissingFile(_))
        ));
        let text = serde_json::to_string(&base).unwrap();
        assert!(text.contains("\"kind\":\"gaussian\""));
    }
}
