//! `noisegen` command-line tool.

mod images;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use noisegen::diffusion::DiffusionSchedule;
use noisegen::io::{Checkpoint, Dataset, DatasetManifest, RunConfig, Scene, Splits};
use noisegen::isp::{builtin_profiles, make_noisy_pair, SensorProfile};
use noisegen::metrics::{akld, mean_noise_std, psnr, MetricReport};
use noisegen::model::{CameraSettings, NoiseModel};
use noisegen::pipeline::{distill, step_rng, train_until, PairSource, TrainState};
use noisegen::samplers::{dips_schedule, sample, SamplerKind, SamplerPlan};
use noisegen::{Error, Result, Tensor};

use images::{list_images, load_image, write_image};

#[derive(Parser)]
#[command(name = "noisegen", version, about = "Camera-conditioned diffusion noise synthesis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON). Defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Grid {
    /// Comma-separated ISO values.
    #[arg(long, value_delimiter = ',', default_value = "100,800,3200")]
    isos: Vec<f64>,
    /// Comma-separated sensor names.
    #[arg(long, value_delimiter = ',', default_value = "sensorA,sensorB")]
    sensors: Vec<String>,
    #[arg(long, default_value_t = 0.01)]
    shutter: f64,
}

impl Grid {
    fn settings(&self) -> Result<Vec<CameraSettings>> {
        if self.isos.is_empty() || self.sensors.is_empty() {
            return Err(Error::InvalidArgument("empty settings grid".into()));
        }
        let mut out = Vec::new();
        for sensor in &self.sensors {
            for &iso in &self.isos {
                let mut s = CameraSettings::new(iso, sensor.clone());
                s.shutter_speed = self.shutter;
                s.validate()?;
                out.push(s);
            }
        }
        Ok(out)
    }
}

#[derive(Args, Clone)]
struct SamplerArgs {
    #[arg(long)]
    kind: Option<SamplerKind>,
    /// Sampling steps S.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    /// Truncation step N for dips-advanced.
    #[arg(long)]
    truncation: Option<usize>,
    /// Sample with the raw weights instead of the moving average.
    #[arg(long)]
    raw: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a paired dataset from clean images with the ISP simulator.
    Simulate {
        #[arg(long)]
        clean_dir: PathBuf,
        #[command(flatten)]
        grid: Grid,
        /// Sensor profile JSON files, replacing the built-in profiles.
        #[arg(long = "profile")]
        profiles: Vec<PathBuf>,
        /// Noisy captures per clean image and setting.
        #[arg(long, default_value_t = 1)]
        captures: usize,
        /// Fraction of source images held out for validation.
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the noise model on a dataset manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total update count; overrides the configuration.
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill the one-step jump to the truncation step.
    Distill {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate noisy versions of one clean image.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        iso: f64,
        #[arg(long)]
        sensor: String,
        #[arg(long, default_value_t = 0.01)]
        shutter: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a sampling step schedule.
    Schedule {
        #[arg(long)]
        t: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 5.0)]
        r: f64,
        #[arg(long, default_value_t = SamplerKind::DipsBasic)]
        kind: SamplerKind,
    },
    /// Score generated noise against a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Metrics: akld, psnr, std.
        #[arg(long = "metric", default_values = ["akld"])]
        metrics: Vec<String>,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Report path (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Create synthetic noisy variants of clean images over a settings grid.
    Augment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clean_dir: PathBuf,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 1)]
        variants: usize,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads().and_then(|_| run(cli)) {
        eprintln!("error: {e}");
        return ExitCode::from(if e.is_io() { 3 } else { 2 });
    }
    ExitCode::SUCCESS
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("NOISEGEN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("NOISEGEN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn scene_id(image: &str, s: &CameraSettings) -> String {
    format!("{image}_{}_iso{}", s.sensor_type, s.iso)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate {
            clean_dir,
            grid,
            profiles,
            captures,
            val_fraction,
            out,
        } => cmd_simulate(&cfg, &clean_dir, &grid, &profiles, captures, val_fraction, &out),
        Command::Train {
            manifest,
            resume,
            iterations,
            out,
        } => cmd_train(&cfg, &manifest, resume.as_deref(), iterations, &out),
        Command::Distill {
            checkpoint,
            manifest,
            iterations,
            out,
        } => cmd_distill(cfg, &checkpoint, &manifest, iterations, &out),
        Command::Sample {
            checkpoint,
            clean,
            iso,
            sensor,
            shutter,
            count,
            sampler,
            out,
        } => {
            let mut settings = CameraSettings::new(iso, sensor);
            settings.shutter_speed = shutter;
            cmd_sample(&cfg, &checkpoint, &clean, settings, count, &sampler, &out)
        }
        Command::Schedule { t, s, r, kind } => {
            let steps = match kind {
                SamplerKind::DipsBasic | SamplerKind::DipsAdvanced => dips_schedule(t, s, r)?,
                k => SamplerPlan::build(k, t, s, r, 1)?.steps,
            };
            let line: Vec<String> = steps.iter().map(|v| v.to_string()).collect();
            println!("{}", line.join(" "));
            Ok(())
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            metrics,
            sampler,
            out,
        } => cmd_eval(&cfg, &checkpoint, &manifest, &split, &metrics, &sampler, &out),
        Command::Augment {
            checkpoint,
            clean_dir,
            grid,
            variants,
            sampler,
            out,
        } => cmd_augment(&cfg, &checkpoint, &clean_dir, &grid, variants, &sampler, &out),
    }
}

fn cmd_simulate(
    cfg: &RunConfig,
    clean_dir: &Path,
    grid: &Grid,
    profile_files: &[PathBuf],
    captures: usize,
    val_fraction: f64,
    out: &Path,
) -> Result<()> {
    if captures == 0 || !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument("captures must be >= 1 and val-fraction in [0, 1)".into()));
    }
    let profiles: Vec<SensorProfile> = if profile_files.is_empty() {
        builtin_profiles()
    } else {
        profile_files.iter().map(|p| SensorProfile::load(p)).collect::<Result<_>>()?
    };
    let settings = grid.settings()?;
    for s in &settings {
        if !profiles.iter().any(|p| p.name == s.sensor_type) {
            return Err(Error::UnknownProfile(s.sensor_type.clone()));
        }
        if !cfg.model.sensor_vocab.contains(&s.sensor_type) {
            return Err(Error::UnknownSensor {
                name: s.sensor_type.clone(),
                known: cfg.model.sensor_vocab.clone(),
            });
        }
    }
    let files = list_images(clean_dir)?;
    let cleans = files.iter().map(|f| load_image(f)).collect::<Result<Vec<_>>>()?;
    create_dir(out)?;

    let jobs: Vec<(usize, usize)> = (0..files.len())
        .flat_map(|i| (0..settings.len()).map(move |j| (i, j)))
        .collect();
    let scenes = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let s = &settings[j];
            let profile = profiles.iter().find(|p| p.name == s.sensor_type).expect("checked");
            let id = scene_id(&stem(&files[i]), s);
            let mut rng = step_rng(cfg.seed, k as u64);
            let mut clean_path = None;
            let mut noisy_paths = Vec::with_capacity(captures);
            for c in 0..captures {
                let pair = make_noisy_pair(&cleans[i], s, profile, &mut rng)?;
                if c == 0 {
                    clean_path = Some(write_image(out, &format!("{id}_clean"), &pair.clean)?);
                }
                noisy_paths.push(write_image(out, &format!("{id}_noisy{c}"), &pair.noisy)?);
            }
            Ok(Scene {
                scene_id: id,
                clean_path: clean_path.expect("captures >= 1"),
                noisy_paths,
                settings: s.clone(),
                profile_name: profile.name.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_val = if files.len() > 1 {
        ((files.len() as f64 * val_fraction).round() as usize).min(files.len() - 1)
    } else {
        0
    };
    let n_train = files.len() - n_val;
    let mut splits = Splits::default();
    for (sc, &(i, _)) in scenes.iter().zip(&jobs) {
        if i < n_train {
            splits.train.push(sc.scene_id.clone());
        } else {
            splits.val.push(sc.scene_id.clone());
        }
    }
    let manifest = DatasetManifest::new(scenes, splits, Some(cfg.seed));
    let path = out.join("manifest.json");
    manifest.validate(&cfg.model.sensor_vocab, &path)?;
    Dataset::save(&manifest, &path)?;
    println!("wrote {} scenes to {}", manifest.scenes.len(), path.display());
    Ok(())
}

fn pair_source(data: &Dataset, split: &str) -> Result<PairSource> {
    let mut items = Vec::new();
    for scene in data.split(split)? {
        let clean = data.load_clean(scene)?;
        for k in 0..scene.noisy_paths.len() {
            items.push((clean.clone(), data.load_noisy(scene, k)?, scene.settings.clone()));
        }
    }
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("split `{split}` has no image pairs")));
    }
    Ok(PairSource { items })
}

fn cmd_train(cfg: &RunConfig, manifest: &Path, resume: Option<&Path>, iterations: Option<u64>, out: &Path) -> Result<()> {
    let data = Dataset::load(manifest, &cfg.model.sensor_vocab)?;
    let source = pair_source(&data, "train")?;
    let sched = cfg.schedule.build()?;
    let mut state = match resume {
        Some(p) => TrainState::from_checkpoint(&Checkpoint::load(p)?, cfg)?,
        None => TrainState::new(cfg)?,
    };
    let until = iterations.unwrap_or(cfg.train.iterations);
    let every = cfg.train.checkpoint_every;
    train_until(&mut state, cfg, &sched, &source, until, |st, loss| {
        println!("step {} loss {loss:.6}", st.step);
        if every > 0 && st.step % every == 0 {
            st.to_checkpoint(cfg, &sched).save(out)?;
        }
        Ok(())
    })?;
    state.to_checkpoint(cfg, &sched).save(out)
}

/// Checkpoint plus the model and schedule it describes.
struct Loaded {
    ckpt: Checkpoint,
    model: NoiseModel,
    psi: Option<NoiseModel>,
    sched: DiffusionSchedule,
}

fn load_model(path: &Path, raw: bool) -> Result<Loaded> {
    let ckpt = Checkpoint::load(path)?;
    let params = match (&ckpt.ema, raw) {
        (Some(ema), false) => ema.clone(),
        _ => ckpt.params.clone(),
    };
    let model = NoiseModel::new(ckpt.config.clone(), params)?;
    let psi = ckpt.psi.clone().map(|p| model.with_params(p)).transpose()?;
    let sched = ckpt.schedule.build()?;
    Ok(Loaded { ckpt, model, psi, sched })
}

fn plan_for(cfg: &RunConfig, args: &SamplerArgs, sched: &DiffusionSchedule) -> Result<SamplerPlan> {
    let s = &cfg.sampler;
    SamplerPlan::build(
        args.kind.unwrap_or(s.kind),
        sched.steps(),
        args.steps.unwrap_or(s.steps),
        args.r.unwrap_or(s.r),
        args.truncation.unwrap_or(s.truncation),
    )
}

fn cmd_distill(mut cfg: RunConfig, checkpoint: &Path, manifest: &Path, iterations: Option<u64>, out: &Path) -> Result<()> {
    let Loaded { mut ckpt, model, sched, .. } = load_model(checkpoint, false)?;
    let data = Dataset::load(manifest, &ckpt.config.sensor_vocab)?;
    let source = pair_source(&data, "train")?;
    if let Some(n) = iterations {
        cfg.distill.iterations = n;
    }
    let result = distill(&model, &cfg, &sched, &source)?;
    for (i, l) in result.losses.iter().enumerate() {
        println!("iter {} loss {l:.6}", i + 1);
    }
    ckpt.psi = Some(result.psi.params().clone());
    ckpt.save(out)
}

fn generate(
    loaded: &Loaded,
    plan: &SamplerPlan,
    clean: &Tensor,
    settings: &CameraSettings,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Tensor> {
    sample(
        &loaded.model,
        plan,
        clean,
        std::slice::from_ref(settings),
        &loaded.sched,
        rng,
        loaded.psi.as_ref(),
    )
}

fn cmd_sample(
    cfg: &RunConfig,
    checkpoint: &Path,
    clean: &Path,
    settings: CameraSettings,
    count: usize,
    args: &SamplerArgs,
    out: &Path,
) -> Result<()> {
    settings.validate()?;
    let loaded = load_model(checkpoint, args.raw)?;
    let plan = plan_for(cfg, args, &loaded.sched)?;
    let clean_img = load_image(clean)?;
    create_dir(out)?;
    let name = stem(clean);
    for i in 0..count {
        let mut rng = step_rng(cfg.seed, i as u64);
        let y = generate(&loaded, &plan, &clean_img, &settings, &mut rng)?;
        let p = write_image(out, &format!("{name}_{}_{i}", plan.kind), &y)?;
        println!("{}", out.join(p).display());
    }
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    split: &str,
    metrics: &[String],
    args: &SamplerArgs,
    out: &Path,
) -> Result<()> {
    for m in metrics {
        if !["akld", "psnr", "std"].contains(&m.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown metric `{m}` (akld, psnr, std)")));
        }
    }
    let loaded = load_model(checkpoint, args.raw)?;
    let data = Dataset::load(manifest, &loaded.ckpt.config.sensor_vocab)?;
    let plan = plan_for(cfg, args, &loaded.sched)?;
    let scenes = data.split(split)?;
    let per_scene = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let clean = data.load_clean(scene)?;
            let real = data.load_noisy(scene, 0)?;
            let mut rng = step_rng(cfg.seed, i as u64);
            let mut gens = Vec::new();
            let mut values = Vec::new();
            for m in metrics {
                let v = match m.as_str() {
                    "akld" => akld(&clean, &real, &cfg.metrics, |_| {
                        let g = generate(&loaded, &plan, &clean, &scene.settings, &mut rng)?;
                        gens.push(g.clone());
                        Ok(g)
                    })?,
                    other => {
                        if gens.is_empty() {
                            gens.push(generate(&loaded, &plan, &clean, &scene.settings, &mut rng)?);
                        }
                        match other {
                            "psnr" => psnr(&gens[0], &clean, 1.0)?,
                            _ => mean_noise_std(&clean, &gens[0])?,
                        }
                    }
                };
                values.push((m.clone(), v));
            }
            Ok((scene.scene_id.clone(), values))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MetricReport::default();
    for (id, values) in per_scene {
        for (m, v) in values {
            report.push(id.clone(), m, v);
        }
    }
    let file = std::fs::File::create(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    report
        .write_jsonl(cfg.seed, std::io::BufWriter::new(file))
        .map_err(|e| match e {
            Error::Io { source, .. } => Error::Io {
                path: out.into(),
                source,
            },
            other => other,
        })?;
    for a in report.aggregates(cfg.seed) {
        println!("{} mean {:.6} over {} images", a.metric, a.mean, a.count);
    }
    Ok(())
}

fn cmd_augment(
    cfg: &RunConfig,
    checkpoint: &Path,
    clean_dir: &Path,
    grid: &Grid,
    variants: usize,
    args: &SamplerArgs,
    out: &Path,
) -> Result<()> {
    if variants == 0 {
        return Err(Error::InvalidArgument("variants must be >= 1".into()));
    }
    let loaded = load_model(checkpoint, args.raw)?;
    let plan = plan_for(cfg, args, &loaded.sched)?;
    let settings = grid.settings()?;
    let files = list_images(clean_dir)?;
    let cleans = files.iter().map(|f| load_image(f)).collect::<Result<Vec<_>>>()?;
    create_dir(out)?;

    let jobs: Vec<(usize, usize)> = (0..files.len())
        .flat_map(|i| (0..settings.len()).map(move |j| (i, j)))
        .collect();
    let scenes = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let s = &settings[j];
            let id = scene_id(&stem(&files[i]), s);
            let mut rng = step_rng(cfg.seed, k as u64);
            let clean_path = write_image(out, &format!("{id}_clean"), &cleans[i])?;
            let noisy_paths = (0..variants)
                .map(|v| {
                    let y = generate(&loaded, &plan, &cleans[i], s, &mut rng)?;
                    write_image(out, &format!("{id}_synth{v}"), &y)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Scene {
                scene_id: id,
                clean_path,
                noisy_paths,
                settings: s.clone(),
                profile_name: format!("synthetic-{}", plan.kind),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let splits = Splits {
        train: scenes.iter().map(|s| s.scene_id.clone()).collect(),
        val: Vec::new(),
    };
    let manifest = DatasetManifest::new(scenes, splits, Some(cfg.seed));
    let path = out.join("manifest.json");
    manifest.validate(&loaded.ckpt.config.sensor_vocab, &path)?;
    Dataset::save(&manifest, &path)?;
    println!("wrote {} outputs to {}", manifest.scenes.len() * variants, path.display());
    Ok(())
}
