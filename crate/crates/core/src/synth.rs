//! Seeded synthetic test signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;
use crate::spectral::TimeSignal;

/// Sum of 2 or 3 sinusoids with frequencies in 100..7000 Hz, random phases
/// and amplitudes, peak amplitude below 1.
pub fn sinusoid_mix<T: Real>(seed: u64, len: usize, sample_rate: u32) -> TimeSignal<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(2..=3);
    let nyquist_cap = 0.45 * sample_rate as f64;
    let partials: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let freq = rng.random_range(100.0..7000.0_f64.min(nyquist_cap));
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.1..0.3);
            (freq, phase, amp)
        })
        .collect();
    let w = std::f64::consts::TAU / sample_rate as f64;
    let samples = (0..len)
        .map(|t| {
            let s: f64 = partials
                .iter()
                .map(|&(f, p, a)| a * (w * f * t as f64 + p).cos())
                .sum();
            T::of(s)
        })
        .collect();
    TimeSignal::new(samples, sample_rate).expect("finite by construction")
}

/// Crude speech-like signal: a harmonic source with a drifting pitch,
/// a syllable-rate amplitude envelope and a little noise.
pub fn speech_like<T: Real>(seed: u64, len: usize, sample_rate: u32) -> TimeSignal<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let f0 = rng.random_range(90.0..220.0);
    let vibrato = rng.random_range(0.5..4.0);
    let syllable = rng.random_range(2.0..5.0);
    let harmonics = 12;
    let gains: Vec<f64> = (1..=harmonics)
        .map(|h| rng.random_range(0.3..1.0) / h as f64)
        .collect();
    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(len);
    for t in 0..len {
        let time = t as f64 / sr;
        let f = f0 * (1.0 + 0.08 * (std::f64::consts::TAU * vibrato * time).sin());
        phase += std::f64::consts::TAU * f / sr;
        let env = 0.5 * (1.0 - (std::f64::consts::TAU * syllable * time).cos());
        let voiced: f64 = gains
            .iter()
            .enumerate()
            .filter(|(h, _)| f * (*h as f64 + 1.0) < 0.45 * sr)
            .map(|(h, g)| g * ((h as f64 + 1.0) * phase).sin())
            .sum();
        let noise = rng.random_range(-1.0..1.0) * 0.01;
        samples.push(T::of(0.3 * env * voiced + noise));
    }
    TimeSignal::new(samples, sample_rate).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signals_are_seeded_and_bounded() {
        let a: TimeSignal<f64> = sinusoid_mix(3, 1000, 16000);
        let b: TimeSignal<f64> = sinusoid_mix(3, 1000, 16000);
        assert_eq!(a, b);
        assert!(a.samples().iter().all(|v| v.abs() < 1.0));
        let s: TimeSignal<f64> = speech_like(1, 4000, 16000);
        assert!(s.samples().iter().all(|v| v.abs() < 1.0));
        assert_ne!(s, speech_like(2, 4000, 16000));
    }
}
