//! Training and distillation loops over simulated or stored pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    adam_update, add_grads, ema_update, scale_grads, training_step, AdamState, DiffusionSchedule, TrainBatch,
};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig, ScheduleEcho};
use crate::isp::{make_noisy_pair, SensorProfile};
use crate::model::{CameraSettings, NoiseModel, Parameters};
use crate::numerics::Tensor;
use crate::samplers::{distill_one_step, Distilled};

/// Stream reserved for weight initialization.
const INIT_STREAM: u64 = u64::MAX;

/// Independent generator for update `step` of a run seeded with `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(step);
    r
}

/// Supplies training batches of random crops.
pub trait BatchSource {
    fn batch(&self, size: usize, crop: usize, rng: &mut ChaCha8Rng) -> Result<TrainBatch>;
}

fn random_crop(t: &Tensor, crop: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.height() < crop || s.width() < crop {
        return Err(Error::InvalidArgument(format!(
            "crop {crop} exceeds image {}x{}",
            s.height(),
            s.width()
        )));
    }
    Ok((rng.gen_range(0..=s.height() - crop), rng.gen_range(0..=s.width() - crop)))
}

/// Draws fresh simulator captures of fixed clean images.
pub struct SimulatorSource {
    pub cleans: Vec<Tensor>,
    pub profiles: Vec<SensorProfile>,
    pub isos: Vec<f64>,
}

impl SimulatorSource {
    pub fn draw_settings(&self, rng: &mut ChaCha8Rng) -> CameraSettings {
        let p = self.profiles.choose(rng).expect("profiles non-empty");
        let iso = *self.isos.choose(rng).expect("isos non-empty");
        CameraSettings::new(iso, p.name.clone())
    }

    fn profile(&self, name: &str) -> Result<&SensorProfile> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownProfile(name.into()))
    }
}

impl BatchSource for SimulatorSource {
    fn batch(&self, size: usize, crop: usize, rng: &mut ChaCha8Rng) -> Result<TrainBatch> {
        if self.cleans.is_empty() || self.profiles.is_empty() || self.isos.is_empty() {
            return Err(Error::InvalidArgument("simulator source has nothing to draw from".into()));
        }
        let (mut xs, mut ss, mut cs) = (Vec::with_capacity(size), Vec::with_capacity(size), Vec::with_capacity(size));
        for _ in 0..size {
            let clean = self.cleans.choose(rng).expect("non-empty");
            let settings = self.draw_settings(rng);
            let pair = make_noisy_pair(clean, &settings, self.profile(&settings.sensor_type)?, rng)?;
            let (y, x) = random_crop(clean, crop, rng)?;
            xs.push(pair.noisy.crop(y, x, crop, crop)?);
            ss.push(pair.clean.crop(y, x, crop, crop)?);
            cs.push(settings);
        }
        TrainBatch::new(Tensor::stack(&xs)?, Tensor::stack(&ss)?, cs)
    }
}

/// Stored (clean, noisy, settings) triples, e.g. from a dataset manifest.
pub struct PairSource {
    pub items: Vec<(Tensor, Tensor, CameraSettings)>,
}

impl BatchSource for PairSource {
    fn batch(&self, size: usize, crop: usize, rng: &mut ChaCha8Rng) -> Result<TrainBatch> {
        if self.items.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        let (mut xs, mut ss, mut cs) = (Vec::with_capacity(size), Vec::with_capacity(size), Vec::with_capacity(size));
        for _ in 0..size {
            let (clean, noisy, settings) = self.items.choose(rng).expect("non-empty");
            let (y, x) = random_crop(clean, crop, rng)?;
            xs.push(noisy.crop(y, x, crop, crop)?);
            ss.push(clean.crop(y, x, crop, crop)?);
            cs.push(settings.clone());
        }
        TrainBatch::new(Tensor::stack(&xs)?, Tensor::stack(&ss)?, cs)
    }
}

/// Raw weights, their moving average and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: NoiseModel,
    pub ema: Parameters,
    pub adam: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mut r = step_rng(cfg.seed, INIT_STREAM);
        let model = NoiseModel::init(cfg.model.clone(), &mut r)?;
        Ok(TrainState {
            ema: model.params().clone(),
            adam: AdamState::new(model.params()),
            model,
            step: 0,
        })
    }

    pub fn ema_model(&self) -> Result<NoiseModel> {
        self.model.with_params(self.ema.clone())
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig, sched: &DiffusionSchedule) -> Checkpoint {
        Checkpoint {
            config: cfg.model.clone(),
            schedule: ScheduleEcho::of(sched),
            params: self.model.params().clone(),
            ema: Some(self.ema.clone()),
            psi: None,
            adam: Some(self.adam.clone()),
            step: self.step,
            seed: cfg.seed,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &RunConfig) -> Result<Self> {
        ck.check_config(&cfg.model)?;
        let model = NoiseModel::new(ck.config.clone(), ck.params.clone())?;
        Ok(TrainState {
            ema: ck.ema.clone().unwrap_or_else(|| ck.params.clone()),
            adam: ck.adam.clone().unwrap_or_else(|| AdamState::new(&ck.params)),
            model,
            step: ck.step,
        })
    }
}

/// One optimizer update: `accumulation` micro-batches, averaged gradients,
/// Adam, then the EMA. Returns the mean micro-batch loss.
pub fn train_update(
    state: &mut TrainState,
    cfg: &RunConfig,
    sched: &DiffusionSchedule,
    source: &dyn BatchSource,
) -> Result<f64> {
    let t = &cfg.train;
    let mut rng = step_rng(cfg.seed, state.step);
    let mut acc: Option<Parameters> = None;
    let mut loss = 0.0;
    for _ in 0..t.accumulation {
        let batch = source.batch(t.batch_size, t.crop, &mut rng)?;
        let out = training_step(&batch, &state.model, sched, t.loss, &mut rng)?;
        loss += out.loss;
        match acc.as_mut() {
            Some(a) => add_grads(a, &out.grads)?,
            None => acc = Some(out.grads),
        }
    }
    let mut grads = acc.expect("accumulation >= 1");
    scale_grads(&mut grads, 1.0 / t.accumulation as f64);
    let (params, adam) = adam_update(state.model.params(), &grads, &state.adam, &t.adam)?;
    state.ema = ema_update(&state.ema, &params, t.ema_decay)?;
    state.model = state.model.with_params(params)?;
    state.adam = adam;
    state.step += 1;
    Ok(loss / t.accumulation as f64)
}

/// Runs updates until `state.step == until`, reporting each loss.
pub fn train_until(
    state: &mut TrainState,
    cfg: &RunConfig,
    sched: &DiffusionSchedule,
    source: &dyn BatchSource,
    until: u64,
    mut on_step: impl FnMut(&TrainState, f64) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    while state.step < until {
        let loss = train_update(state, cfg, sched, source)?;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!("loss diverged at step {}", state.step)));
        }
        losses.push(loss);
        on_step(state, loss)?;
    }
    Ok(losses)
}

/// Distills the one-step jump from `teacher` with batches from `source`.
pub fn distill(
    teacher: &NoiseModel,
    cfg: &RunConfig,
    sched: &DiffusionSchedule,
    source: &dyn BatchSource,
) -> Result<Distilled> {
    let d = &cfg.distill;
    let mut rng = step_rng(cfg.seed, INIT_STREAM - 1);
    distill_one_step(
        teacher,
        sched,
        cfg.sampler.truncation,
        d.iterations as usize,
        &d.adam,
        |_, r| source.batch(d.batch_size, cfg.train.crop, r),
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::clean_patches;
    use crate::isp::builtin_profiles;
    use crate::model::ModelConfig;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig {
            base_channels: 8,
            ..ModelConfig::default()
        };
        cfg.train.batch_size = 2;
        cfg.train.crop = 8;
        cfg.seed = 11;
        cfg
    }

    fn source() -> SimulatorSource {
        SimulatorSource {
            cleans: clean_patches(3, 16, 1),
            profiles: builtin_profiles(),
            isos: vec![100.0, 800.0, 3200.0],
        }
    }

    #[test]
    fn batches_are_seeded_crops() {
        let src = source();
        let a = src.batch(4, 8, &mut step_rng(1, 0)).unwrap();
        let b = src.batch(4, 8, &mut step_rng(1, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x0.shape(), crate::Shape::new(4, 3, 8, 8));
        assert_ne!(a, src.batch(4, 8, &mut step_rng(1, 1)).unwrap());
        assert!(src.batch(1, 32, &mut step_rng(1, 0)).is_err());
        let empty = PairSource { items: vec![] };
        assert!(empty.batch(1, 8, &mut step_rng(1, 0)).is_err());
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let cfg = small_cfg();
        let sched = cfg.schedule.build().unwrap();
        let src = source();

        let mut straight = TrainState::new(&cfg).unwrap();
        train_until(&mut straight, &cfg, &sched, &src, 5, |_, _| Ok(())).unwrap();

        let mut first = TrainState::new(&cfg).unwrap();
        train_until(&mut first, &cfg, &sched, &src, 2, |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        first.to_checkpoint(&cfg, &sched).save(&path).unwrap();
        let mut resumed = TrainState::from_checkpoint(&Checkpoint::load(&path).unwrap(), &cfg).unwrap();
        let losses = train_until(&mut resumed, &cfg, &sched, &src, 5, |_, _| Ok(())).unwrap();
        assert_eq!(losses.len(), 3);
        assert_eq!(resumed, straight);
    }

    #[test]
    fn single_update_checkpoint() {
        let cfg = small_cfg();
        let sched = cfg.schedule.build().unwrap();
        let mut s = TrainState::new(&cfg).unwrap();
        let losses = train_until(&mut s, &cfg, &sched, &source(), 1, |_, _| Ok(())).unwrap();
        assert!(losses[0].is_finite());
        let ck = s.to_checkpoint(&cfg, &sched);
        assert_eq!(ck.step, 1);
        assert!(ck.ema.is_some());
        assert_ne!(ck.ema.as_ref().unwrap(), &ck.params);
    }
}
