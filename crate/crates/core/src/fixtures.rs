//! Procedural clean images: gradients, flat shapes and stripes with a
//! spread of intensities, standing in for natural image patches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::numerics::{Shape, Tensor};

/// One `3×size×size` patch in `[0.02, 0.98]`, deterministic in `seed`.
pub fn clean_patch(size: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let color = |r: &mut ChaCha8Rng| [0; 3].map(|_| r.gen_range(0.05..0.95f64));
    let (c0, c1) = (color(&mut r), color(&mut r));
    let angle: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = vec![[0.0f64; 3]; size * size];
    let n = size as f64;
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f64 / n - 0.5) * ca + (y as f64 / n - 0.5) * sa + 0.5).clamp(0.0, 1.0);
            img[y * size + x] = [0, 1, 2].map(|c| c0[c] * (1.0 - u) + c1[c] * u);
        }
    }
    let shapes = r.gen_range(1..=3);
    for _ in 0..shapes {
        let col = color(&mut r);
        let (cx, cy) = (r.gen_range(0.0..n), r.gen_range(0.0..n));
        let rad = r.gen_range(0.15..0.4) * n;
        let disc = r.gen_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disc {
                    dx * dx + dy * dy < rad * rad
                } else {
                    dx.abs() < rad && dy.abs() < 0.6 * rad
                };
                if inside {
                    img[y * size + x] = col;
                }
            }
        }
    }
    if r.gen_bool(0.5) {
        let period = r.gen_range(3.0..8.0);
        let amp = r.gen_range(0.05..0.15);
        for y in 0..size {
            for x in 0..size {
                let s = amp * (std::f64::consts::TAU * x as f64 / period).sin();
                for v in &mut img[y * size + x] {
                    *v += s;
                }
            }
        }
    }
    let mut data = vec![0.0f32; 3 * size * size];
    for (i, px) in img.iter().enumerate() {
        for c in 0..3 {
            data[c * size * size + i] = px[c].clamp(0.02, 0.98) as f32;
        }
    }
    Tensor::new(Shape::new(1, 3, size, size), data).expect("fixture shape")
}

/// `count` patches with consecutive seeds starting at `seed`.
pub fn clean_patches(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count as u64).map(|i| clean_patch(size, seed.wrapping_add(i))).collect()
}
