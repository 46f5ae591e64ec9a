//! The conditioned noise predictor: a three-stage UNet whose blocks are
//! modulated by step/camera affine heads and whose decoder receives
//! features from a separate clean-image encoder at every scale.

use rand::Rng;

use super::camera::CameraSettings;
use super::config::{ModelConfig, MODULATED_BLOCKS, SCALES};
use super::params::{Bound, Parameters};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Padding, Real, Resample, Shape, Tape, Tensor, Var};

/// Interleaved sin/cos features of `t` with frequencies spaced
/// geometrically from 1 down to 1/10000.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dim must be even, got {dim}")));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("embedding position must be >= 0, got {t}")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            10000f64.powf(-(i as f64) / (half - 1) as f64)
        };
        out.push((t * freq).sin());
        out.push((t * freq).cos());
    }
    Ok(out)
}

/// Anything that predicts the diffusion noise for a batch.
pub trait EpsModel<T: Real = f32> {
    /// Records the prediction on `tape`. The returned [`Bound`] names the
    /// trainable parameter handles (empty for parameter-free models).
    fn forward(
        &self,
        tape: &mut Tape<T>,
        x_t: Var,
        steps: &[usize],
        clean: Var,
        settings: &[CameraSettings],
    ) -> Result<(Var, Bound)>;

    /// Gradient-free evaluation.
    fn predict(&self, x_t: &Tensor<T>, steps: &[usize], clean: &Tensor<T>, settings: &[CameraSettings]) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(x_t.clone());
        let s = tape.constant(clean.clone());
        let (eps, _) = self.forward(&mut tape, x, steps, s, settings)?;
        Ok(tape.value(eps).clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel<T: Real = f32> {
    config: ModelConfig,
    params: Parameters<T>,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(config: ModelConfig, params: Parameters<T>) -> Result<Self> {
        config.validate()?;
        params.check_manifest(&config)?;
        Ok(NoiseModel { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config, rng);
        Ok(NoiseModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters<T> {
        self.params
    }

    /// Same architecture with a different parameter table.
    pub fn with_params(&self, params: Parameters<T>) -> Result<Self> {
        Self::new(self.config.clone(), params)
    }

    pub fn cast<U: Real>(&self) -> NoiseModel<U> {
        NoiseModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_inputs(&self, x: Shape, s: Shape, steps: &[usize], settings: &[CameraSettings]) -> Result<()> {
        const OP: &str = "eps_theta";
        crate::numerics::check_same(OP, x, s)?;
        if x.channels() != 3 {
            return Err(Error::dim(OP, "channel", x.channels(), 3));
        }
        check_divisible(x)?;
        if steps.len() != x.batch() {
            return Err(Error::dim(OP, "batch (steps)", steps.len(), x.batch()));
        }
        if settings.len() != x.batch() {
            return Err(Error::dim(OP, "batch (camera settings)", settings.len(), x.batch()));
        }
        Ok(())
    }

    fn mlp(&self, tape: &mut Tape<T>, bound: &Bound, name: &str, input: Var) -> Result<Var> {
        let mut h = input;
        for (i, layer) in ["fc1", "fc2", "fc3"].iter().enumerate() {
            if i > 0 {
                h = tape.activation(h, Activation::Silu);
            }
            let w = bound.var(&format!("{name}.{layer}.weight"))?;
            let b = bound.var(&format!("{name}.{layer}.bias"))?;
            h = tape.linear(h, w, b)?;
        }
        Ok(h)
    }

    /// Projected camera-settings embedding, one row per item.
    pub fn encode_camera(&self, tape: &mut Tape<T>, bound: &Bound, settings: &[CameraSettings]) -> Result<Var> {
        let len = self.config.raw_camera_len();
        let mut raw = Vec::with_capacity(settings.len() * len);
        for cs in settings {
            raw.extend(cs.raw_features(&self.config.sensor_vocab)?.into_iter().map(T::from_f64));
        }
        let raw = tape.constant(Tensor::new(Shape::matrix(settings.len(), len), raw)?);
        self.mlp(tape, bound, "camera", raw)
    }

    /// Shared conditioning vector: time MLP of the step embedding plus the
    /// camera MLP of the settings encoding.
    pub fn condition(&self, tape: &mut Tape<T>, bound: &Bound, steps: &[usize], settings: &[CameraSettings]) -> Result<Var> {
        if steps.len() != settings.len() {
            return Err(Error::dim("condition", "batch (steps vs settings)", steps.len(), settings.len()));
        }
        let dim = self.config.time_embed_dim;
        let mut emb = Vec::with_capacity(steps.len() * dim);
        for &t in steps {
            emb.extend(sinusoidal_embed(t as f64, dim)?.into_iter().map(T::from_f64));
        }
        let emb = tape.constant(Tensor::new(Shape::matrix(steps.len(), dim), emb)?);
        let time = self.mlp(tape, bound, "time", emb)?;
        let cam = self.encode_camera(tape, bound, settings)?;
        tape.add(time, cam)
    }

    /// Per-channel `(gamma, beta)` of one modulated block, given the
    /// activated conditioning vector.
    pub fn tccam(&self, tape: &mut Tape<T>, bound: &Bound, cond_act: Var, layer: &str) -> Result<(Var, Var)> {
        if !MODULATED_BLOCKS.iter().any(|(n, _)| *n == layer) {
            return Err(Error::InvalidArgument(format!("`{layer}` is not a modulated block")));
        }
        let lin = |tape: &mut Tape<T>, x: Var, head: &str| -> Result<Var> {
            let w = bound.var(&format!("{layer}.film.{head}.weight"))?;
            let b = bound.var(&format!("{layer}.film.{head}.bias"))?;
            tape.linear(x, w, b)
        };
        let hidden = lin(tape, cond_act, "hidden")?;
        let hidden = tape.activation(hidden, Activation::Silu);
        let gamma_res = lin(tape, hidden, "gamma")?;
        let gamma = tape.add_scalar(gamma_res, 1.0);
        let beta = lin(tape, hidden, "beta")?;
        Ok((gamma, beta))
    }

    /// Gradient-free `(gamma, beta)` for a single step and setting.
    pub fn tccam_values(&self, step: usize, settings: &CameraSettings, layer: &str) -> Result<(Vec<T>, Vec<T>)> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape, false);
        let cond = self.condition(&mut tape, &bound, &[step], std::slice::from_ref(settings))?;
        let act = tape.activation(cond, Activation::Silu);
        let (g, b) = self.tccam(&mut tape, &bound, act, layer)?;
        Ok((tape.value(g).data().to_vec(), tape.value(b).data().to_vec()))
    }

    fn conv(&self, tape: &mut Tape<T>, bound: &Bound, name: &str, x: Var) -> Result<Var> {
        let w = bound.var(&format!("{name}.weight"))?;
        let b = bound.var(&format!("{name}.bias"))?;
        tape.conv2d(x, w, b, 1, Padding::Same)
    }

    /// conv → silu → conv → [affine] → silu
    fn block(&self, tape: &mut Tape<T>, bound: &Bound, name: &str, x: Var, film: Option<(&str, Var)>) -> Result<Var> {
        let h = self.conv(tape, bound, &format!("{name}.conv1"), x)?;
        let h = tape.activation(h, Activation::Silu);
        let mut h = self.conv(tape, bound, &format!("{name}.conv2"), h)?;
        if let Some((layer, cond_act)) = film {
            let (g, b) = self.tccam(tape, bound, cond_act, layer)?;
            h = tape.apply_affine(h, g, b)?;
        }
        Ok(tape.activation(h, Activation::Silu))
    }

    /// Three-scale encoder. `prefix` selects the weight set (`x` or `s`).
    fn encoder(&self, tape: &mut Tape<T>, bound: &Bound, prefix: &str, input: Var, cond_act: Option<Var>) -> Result<[Var; SCALES]> {
        let mut h = self.conv(tape, bound, &format!("{prefix}enc.stem"), input)?;
        let mut feats = Vec::with_capacity(SCALES);
        for stage in 1..=SCALES {
            if stage > 1 {
                h = tape.resample(h, Resample::Down2Avg)?;
            }
            let layer = format!("enc{stage}");
            let film = cond_act.map(|c| (layer.as_str(), c));
            h = self.block(tape, bound, &format!("{prefix}enc{stage}"), h, film)?;
            feats.push(h);
        }
        Ok([feats[0], feats[1], feats[2]])
    }

    /// Clean-image features at full, half and quarter resolution.
    pub fn mcam_features(&self, tape: &mut Tape<T>, bound: &Bound, clean: Var) -> Result<[Var; SCALES]> {
        check_divisible(tape.shape(clean))?;
        self.encoder(tape, bound, "s", clean, None)
    }

    /// Noisy-input encoder features (modulated), exposed for inspection.
    pub fn xt_features(&self, tape: &mut Tape<T>, bound: &Bound, x_t: Var, cond_act: Var) -> Result<[Var; SCALES]> {
        check_divisible(tape.shape(x_t))?;
        self.encoder(tape, bound, "x", x_t, Some(cond_act))
    }

    /// Full prediction with an already-bound parameter table.
    pub fn eps_theta(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x_t: Var,
        steps: &[usize],
        clean: Var,
        settings: &[CameraSettings],
    ) -> Result<Var> {
        self.check_inputs(tape.shape(x_t), tape.shape(clean), steps, settings)?;
        let cond = self.condition(tape, bound, steps, settings)?;
        let cond_act = tape.activation(cond, Activation::Silu);
        let fx = self.xt_features(tape, bound, x_t, cond_act)?;
        let fs = self.mcam_features(tape, bound, clean)?;

        let mut h = self.block(tape, bound, "mid", fx[2], Some(("mid", cond_act)))?;
        for stage in (1..=SCALES).rev() {
            if stage < SCALES {
                h = tape.resample(h, Resample::Up2Nearest)?;
            }
            let i = stage - 1;
            let cat = tape.concat_channels(&[h, fs[i], fx[i]])?;
            let name = format!("dec{stage}");
            h = self.block(tape, bound, &name, cat, Some((name.as_str(), cond_act)))?;
        }
        self.conv(tape, bound, "out", h)
    }
}

impl<T: Real> EpsModel<T> for NoiseModel<T> {
    fn forward(
        &self,
        tape: &mut Tape<T>,
        x_t: Var,
        steps: &[usize],
        clean: Var,
        settings: &[CameraSettings],
    ) -> Result<(Var, Bound)> {
        let bound = self.params.bind(tape, true);
        let eps = self.eps_theta(tape, &bound, x_t, steps, clean, settings)?;
        Ok((eps, bound))
    }
}

fn check_divisible(s: Shape) -> Result<()> {
    let div = 1 << (SCALES - 1);
    if s.height() % div != 0 || s.width() % div != 0 || s.height() == 0 || s.width() == 0 {
        return Err(Error::InvalidShape {
            op: "eps_theta",
            detail: format!(
                "spatial extents {}x{} must be positive multiples of {div}",
                s.height(),
                s.width()
            ),
        });
    }
    Ok(())
}
