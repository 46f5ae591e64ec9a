//! Forward noising process, training objective and optimizer.

mod optim;
mod schedule;
mod train;

pub use optim::{adam_update, add_grads, ema_update, scale_grads, AdamConfig, AdamState};
pub use schedule::{q_sample, q_sample_batch, standardize_input, BetaSchedule, DiffusionSchedule};
pub use train::{
    draw_step_noise, from_model_space, to_model_space, training_step, LossKind, StepDraws, StepOutput, TrainBatch,
};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{Bound, CameraSettings, EpsModel, ModelConfig, NoiseModel, Parameters};
    use crate::numerics::{Shape, Tape, Tensor, Var};
    use crate::Result;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_schedule_examples() {
        let s = DiffusionSchedule::new(BetaSchedule::Linear, 1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.steps(), 1000);
        assert!((s.beta(1) - 1e-4).abs() < 1e-15);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert_eq!(s.posterior_var(1), 0.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let recur = s.alpha_bar(t - 1) * (1.0 - s.beta(t));
            assert!((s.alpha_bar(t) - recur).abs() < 1e-15);
        }
        let one = DiffusionSchedule::new(BetaSchedule::Linear, 1, 0.5, 0.5).unwrap();
        assert_eq!(one.alpha_bar(1), 0.5);
        assert!(DiffusionSchedule::new(BetaSchedule::Linear, 0, 1e-4, 0.02).is_err());
        assert!(DiffusionSchedule::new(BetaSchedule::Linear, 10, 0.1, 0.01).is_err());
    }

    #[test]
    fn scaled_schedule_reaches_noise() {
        let s = DiffusionSchedule::scaled_linear(200).unwrap();
        assert!(s.alpha_bar(200) < 1e-4);
        assert!((s.beta(1) - 5e-4).abs() < 1e-15);
        assert!((s.beta(200) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn q_sample_is_affine_and_checks_step() {
        let s = DiffusionSchedule::scaled_linear(50).unwrap();
        let mut r = rng(1);
        let x0: Tensor = Tensor::randn(Shape::new(1, 3, 4, 4), &mut r);
        let e = Tensor::randn(x0.shape(), &mut r);
        let xt = q_sample(&x0, 20, &e, &s).unwrap();
        let i = 7;
        let expect = s.alpha_bar(20).sqrt() * x0.data()[i] as f64 + (1.0 - s.alpha_bar(20)).sqrt() * e.data()[i] as f64;
        assert!((xt.data()[i] as f64 - expect).abs() < 1e-6);
        assert!(matches!(q_sample(&x0, 0, &e, &s), Err(crate::Error::StepOutOfRange { .. })));
        assert!(q_sample(&x0, 51, &e, &s).is_err());

        let pair = Tensor::stack(&[x0.clone(), x0.clone()]).unwrap();
        let epair = Tensor::stack(&[e.clone(), e.clone()]).unwrap();
        let b = q_sample_batch(&pair, &[20, 50], &epair, &s).unwrap();
        assert_eq!(b.item(0), xt);
        assert_eq!(b.item(1), q_sample(&x0, 50, &e, &s).unwrap());
    }

    #[test]
    fn q_sample_variance_monte_carlo() {
        let s = DiffusionSchedule::scaled_linear(200).unwrap();
        let x0 = Tensor::full(Shape::vector(10_000), 0.3f32);
        for t in [50, 100, 200] {
            let e = Tensor::randn(x0.shape(), &mut rng(t as u64));
            let xt = q_sample(&x0, t, &e, &s).unwrap();
            let rel = (xt.variance() - (1.0 - s.alpha_bar(t))).abs() / (1.0 - s.alpha_bar(t));
            assert!(rel < 0.05, "t={t}: {rel}");
        }
    }

    #[test]
    fn model_space_round_trip() {
        let t = Tensor::new(Shape::vector(3), vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(to_model_space(&t).data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(from_model_space(&to_model_space(&t)), t);
    }

    /// Predicts the true noise exactly by reading it back out of `x_t`.
    struct Oracle<'a> {
        sched: &'a DiffusionSchedule,
        x0: Tensor,
    }

    impl EpsModel for Oracle<'_> {
        fn forward(
            &self,
            tape: &mut Tape,
            x_t: Var,
            steps: &[usize],
            clean: Var,
            _settings: &[CameraSettings],
        ) -> Result<(Var, Bound)> {
            // The input is (x_t - √ᾱ s)/σ_t, so ε = input + √ᾱ (s - x0)/σ_t.
            let x = tape.value(x_t).clone();
            let s = tape.value(clean).clone();
            let x0 = to_model_space(&self.x0);
            let per = x.numel() / steps.len();
            let mut out = x.clone();
            for (b, &t) in steps.iter().enumerate() {
                let ab = self.sched.alpha_bar(t);
                for i in b * per..(b + 1) * per {
                    let gap = s.data()[i] as f64 - x0.data()[i] as f64;
                    let v = x.data()[i] as f64 + ab.sqrt() * gap / (1.0 - ab).sqrt();
                    out.data_mut()[i] = v as f32;
                }
            }
            Ok((tape.constant(out), Bound::default()))
        }
    }

    fn batch(seed: u64, n: usize, hw: usize) -> TrainBatch {
        let mut r = rng(seed);
        let shape = Shape::new(n, 3, hw, hw);
        TrainBatch::new(
            Tensor::uniform(shape, 0.0, 1.0, &mut r),
            Tensor::uniform(shape, 0.0, 1.0, &mut r),
            (0..n).map(|i| CameraSettings::new([100.0, 800.0, 3200.0][i % 3], "sensorA")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn oracle_model_has_zero_loss() {
        let s = DiffusionSchedule::scaled_linear(100).unwrap();
        let b = batch(2, 3, 4);
        let oracle = Oracle { sched: &s, x0: b.x0.clone() };
        let out = training_step(&b, &oracle, &s, LossKind::SquaredMean, &mut rng(3)).unwrap();
        assert!(out.loss < 1e-8, "{}", out.loss);
        assert_eq!(out.grads.len(), 0);
        assert!(out.draws.steps.iter().all(|&t| (1..=100).contains(&t)));
    }

    #[test]
    fn batch_validation() {
        let b = batch(4, 2, 4);
        assert!(TrainBatch::new(b.x0.clone(), b.clean.clone(), vec![]).is_err());
        let mut bad = b.x0.clone();
        bad.data_mut()[0] = 1.5;
        assert!(TrainBatch::new(bad, b.clean.clone(), b.settings.clone()).is_err());
    }

    #[test]
    fn training_step_is_deterministic_per_seed() {
        let s = DiffusionSchedule::scaled_linear(100).unwrap();
        let m = NoiseModel::init(ModelConfig::default(), &mut rng(5)).unwrap();
        let b = batch(6, 2, 8);
        let a = training_step(&b, &m, &s, LossKind::SquaredMean, &mut rng(7)).unwrap();
        let c = training_step(&b, &m, &s, LossKind::SquaredMean, &mut rng(7)).unwrap();
        assert_eq!(a.loss, c.loss);
        assert_eq!(a.grads, c.grads);
        assert_eq!(a.grads.len(), m.params().len());

        // The norm loss is the root of the squared loss with a rescaled gradient.
        let n = training_step(&b, &m, &s, LossKind::Norm, &mut rng(7)).unwrap();
        assert!((n.loss - a.loss.sqrt()).abs() < 1e-6);
        let k = 0.5 / a.loss.sqrt();
        let (ga, gn) = (a.grads.get("out.bias").unwrap(), n.grads.get("out.bias").unwrap());
        for (x, y) in ga.data().iter().zip(gn.data()) {
            assert!((*x as f64 * k - *y as f64).abs() < 1e-5 * (1.0 + x.abs() as f64));
        }
    }

    /// Loss over a fixed set of step/noise draws.
    fn probe_loss(b: &TrainBatch, m: &NoiseModel, s: &DiffusionSchedule) -> f64 {
        let mut r = rng(99);
        (0..8).map(|_| training_step(b, m, s, LossKind::SquaredMean, &mut r).unwrap().loss).sum::<f64>() / 8.0
    }

    #[test]
    fn short_training_halves_loss() {
        let s = DiffusionSchedule::scaled_linear(100).unwrap();
        let mut m = NoiseModel::init(ModelConfig::default(), &mut rng(8)).unwrap();
        let b = batch(9, 2, 8);
        let adam = AdamConfig {
            lr: 1e-3,
            ..Default::default()
        };
        let mut state = AdamState::new(m.params());
        let mut r = rng(10);
        let before = probe_loss(&b, &m, &s);
        for _ in 0..200 {
            let mut acc: Option<Parameters> = None;
            for _ in 0..2 {
                let out = training_step(&b, &m, &s, LossKind::SquaredMean, &mut r).unwrap();
                match acc.as_mut() {
                    None => acc = Some(out.grads),
                    Some(a) => add_grads(a, &out.grads).unwrap(),
                }
            }
            let mut g = acc.unwrap();
            scale_grads(&mut g, 0.5);
            let (p, st) = adam_update(m.params(), &g, &state, &adam).unwrap();
            m = m.with_params(p).unwrap();
            state = st;
        }
        let after = probe_loss(&b, &m, &s);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }
}
