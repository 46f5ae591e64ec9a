//! Finite-difference gradient oracle for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Padding, Shape, Tape, Tensor, Var};
use crate::error::Result;

pub const STEP: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between analytic gradients of `Σ w ⊙ f(inputs)` and
/// central differences, for a fixed random projection `w`.
pub fn check_op<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let out_shape = {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        tape.shape(out)
    };
    let proj = Tensor::<f64>::randn(out_shape, &mut rng);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    let loss = tape.weighted_sum(out, proj.clone()).expect("loss");
    let grads = tape.backward(loss).expect("backward");

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        tape.value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, w)| a * w)
            .sum()
    };

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let mut work = inputs.to_vec();
            work[i].data_mut()[j] += STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] -= 2.0 * STEP;
            let minus = eval(&work);
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Direct-loop reference implementations used to cross-check fast paths.
pub mod reference {
    use super::*;

    pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: Padding) -> Tensor<f64> {
        let [n, cin, h, wd] = x.shape().0;
        let [cout, _, k, _] = w.shape().0;
        let p = match pad {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        } as isize;
        let oh = (h + 2 * p as usize - k) / stride + 1;
        let ow = (wd + 2 * p as usize - k) / stride + 1;
        let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - p;
                                    let ix = (ox * stride + kx) as isize - p;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at(bi, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        let idx = out.index(bi, co, oy, ox);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }
}
