//! Test-only oracles shared by the integration suites.
//!
//! Everything here is deliberately naive: dense matrices, nested loops and
//! central differences, independent of the fast paths under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specrecon::nn::{Tape, Tensor, Var};
use specrecon::spectral::{make_window, StftConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero so activation kinks are never
/// crossed by a finite-difference probe.
pub fn random_tensor_away_from_zero(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Result of comparing tape gradients against central differences.
#[derive(Debug)]
pub struct GradCheck {
    pub worst_relative_error: f64,
}

/// Checks the gradients of `build` with respect to each tensor in `inputs`
/// using central differences with step `h`. The relative error of each
/// input is `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-12)`.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    h: f64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> GradCheck {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("backward");

    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).unwrap().data()[0]
    };

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).unwrap();
        let mut numeric = vec![0.0; inputs[i].len()];
        let mut probe = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe);
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe);
            probe[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-12));
    }
    GradCheck {
        worst_relative_error: worst,
    }
}

/// Smooth scalar loss `Σ (out − r)²` against a random target `r`.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).unwrap().shape();
    let target = random_tensor(shape, &mut rng(seed));
    tape.sum_squared_diff(out, &target).unwrap()
}

/// Direct nested-loop 1-D convolution with symmetric zero padding.
pub fn naive_conv1d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let [batch, cin, len] = x.shape();
    let [cout, _, k] = w.shape();
    let lout = (len + 2 * pad - k) / stride + 1;
    Tensor::from_fn([batch, cout, lout], |bi, co, o| {
        let mut acc = b.get(0, co, 0);
        for ci in 0..cin {
            for j in 0..k {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    acc += w.get(co, ci, j) * x.get(bi, ci, pos as usize);
                }
            }
        }
        acc
    })
}

/// Explicit full-spectrum analysis matrix: row `n * fft_size + f`, column `t`.
pub fn dense_stft_matrix(cfg: &StftConfig, len: usize) -> DMatrix<Complex64> {
    let frames = cfg.frames_for(len).expect("long enough");
    let w = make_window::<f64>(cfg);
    let f_size = cfg.fft_size;
    let mut m = DMatrix::from_element(frames * f_size, len, Complex64::new(0.0, 0.0));
    for n in 0..frames {
        for f in 0..f_size {
            for j in 0..cfg.win_len {
                let t = n * cfg.hop + j;
                let ang = -2.0 * std::f64::consts::PI * (f * j) as f64 / f_size as f64;
                m[(n * f_size + f, t)] = Complex64::from_polar(w[j], ang);
            }
        }
    }
    m
}

/// Full spectrum (rows `n * F + f`) from a stored half spectrum.
pub fn expand_to_full(cfg: &StftConfig, half: &ndarray::Array2<Complex64>) -> DVector<Complex64> {
    let f_size = cfg.fft_size;
    let frames = half.ncols();
    let mut v = DVector::from_element(frames * f_size, Complex64::new(0.0, 0.0));
    for n in 0..frames {
        for f in 0..f_size {
            let k = if f <= f_size / 2 { f } else { f_size - f };
            let c = half[[k, n]];
            v[n * f_size + f] = if f <= f_size / 2 { c } else { c.conj() };
        }
    }
    v
}

/// Least-squares real signal for a full spectrum: solves the real normal
/// equations `Re(WᴴW) x = Re(Wᴴ c)` in the minimum-norm sense (samples
/// covered only by zero window weights come out as zero).
pub fn dense_pseudo_inverse(w: &DMatrix<Complex64>, c: &DVector<Complex64>) -> DVector<f64> {
    let wh = w.adjoint();
    let gram = (&wh * w).map(|z| z.re);
    let rhs = (&wh * c).map(|z| z.re);
    gram.svd(true, true).solve(&rhs, 1e-9).expect("svd solve")
}

/// Dense projection `W W⁺ c`, returned as a full-spectrum vector.
pub fn dense_projection(w: &DMatrix<Complex64>, c: &DVector<Complex64>) -> DVector<Complex64> {
    let x = dense_pseudo_inverse(w, c).map(|v| Complex64::new(v, 0.0));
    w * x
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}
