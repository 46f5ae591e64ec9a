use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noisegen::diffusion::{training_step, DiffusionSchedule, LossKind, TrainBatch};
use noisegen::fixtures::clean_patches;
use noisegen::metrics::{akld_samples, AkldConfig};
use noisegen::model::{CameraSettings, EpsModel, ModelConfig, NoiseModel};
use noisegen::numerics::{Padding, Tape};
use noisegen::samplers::dips_schedule;
use noisegen::{Shape, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("conv2d_3x3");
    for size in [16usize, 32] {
        let x: Tensor = Tensor::randn(Shape::new(8, 32, size, size), &mut rng);
        let w: Tensor = Tensor::randn(Shape::new(32, 32, 3, 3), &mut rng);
        let b: Tensor = Tensor::zeros(Shape::new(1, 1, 1, 32));
        g.bench_with_input(BenchmarkId::from_parameter(size), &size, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::inference();
                let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
                let y = tape.conv2d(xv, wv, bv, 1, Padding::Same).unwrap();
                black_box(tape.value(y).data()[0]);
            })
        });
    }
    g.finish();
}

fn model(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = NoiseModel::init(ModelConfig::default(), &mut rng).unwrap();
    let sched = DiffusionSchedule::scaled_linear(200).unwrap();
    let settings = vec![CameraSettings::new(800.0, "sensorA"); 8];
    let clean = Tensor::stack(&clean_patches(8, 32, 3)).unwrap();
    let x: Tensor = Tensor::randn(clean.shape(), &mut rng);
    let steps = vec![100; 8];
    c.bench_function("eps_predict_8x32", |b| {
        b.iter(|| black_box(model.predict(&x, &steps, &clean, &settings).unwrap()))
    });

    let small = Tensor::stack(&clean_patches(8, 16, 4)).unwrap();
    let batch = TrainBatch::new(small.clone(), small, settings.clone()).unwrap();
    c.bench_function("training_step_8x16", |b| {
        b.iter(|| black_box(training_step(&batch, &model, &sched, LossKind::SquaredMean, &mut rng).unwrap().loss))
    });
}

fn schedule_and_metric(c: &mut Criterion) {
    c.bench_function("dips_schedule_1000_10", |b| {
        b.iter(|| black_box(dips_schedule(black_box(1000), 10, 5.0).unwrap()))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clean = Tensor::stack(&clean_patches(4, 32, 5)).unwrap();
    let real: Tensor = Tensor::randn(clean.shape(), &mut rng);
    let gens: Vec<Tensor> = (0..8).map(|_| Tensor::randn(clean.shape(), &mut rng)).collect();
    c.bench_function("akld_4x32_k8", |b| {
        b.iter(|| black_box(akld_samples(&clean, &real, &gens, &AkldConfig::default()).unwrap()))
    });
}

criterion_group!(benches, conv, model, schedule_and_metric);
criterion_main!(benches);
