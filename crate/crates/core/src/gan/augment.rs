//! Initial-phase augmentation.
//!
//! Every positive-frequency component of the signal is rotated by the same
//! angle, i.e. the analytic signal is multiplied by `e^{jθ}` and the real
//! part kept. The DC and Nyquist components are real and stay unchanged, so
//! the signal energy is preserved exactly.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::scalar::Real;
use crate::spectral::TimeSignal;

/// Rotates the signal's initial phase by `theta` radians.
pub fn rotate_phase<T: Real>(x: &TimeSignal<T>, theta: f64) -> TimeSignal<T> {
    let n = x.len();
    if n < 2 {
        return x.clone();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<T>> = x
        .samples()
        .iter()
        .map(|&v| Complex::new(v, T::zero()))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let rot = Complex::new(T::of(theta.cos()), T::of(theta.sin()));
    let upper = n.div_ceil(2);
    for k in 1..upper {
        buf[k] = buf[k] * rot;
        buf[n - k] = buf[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = T::one() / T::of(n as f64);
    let samples = buf.iter().map(|c| c.re * scale).collect();
    TimeSignal::new(samples, x.sample_rate()).expect("rotation keeps samples finite")
}

/// Rotates by an angle drawn uniformly from `[0, 2π)` with the given seed.
pub fn augment_phase<T: Real>(x: &TimeSignal<T>, seed: u64) -> TimeSignal<T> {
    let theta = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..std::f64::consts::TAU);
    rotate_phase(x, theta)
}
