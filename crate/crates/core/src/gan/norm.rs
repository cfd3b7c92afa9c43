use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Real;
use crate::spectral::{ComplexSpectrogram, StftConfig};

/// Lower clamp applied to fitted standard deviations.
pub const MIN_STD: f64 = 1e-8;

/// Per-frequency, per-part (real / imaginary) mean and standard deviation.
///
/// Channel `k` holds the real part of bin `k`; channel `bins + k` the
/// imaginary part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub bins: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity normalization (zero mean, unit scale).
    pub fn identity(bins: usize) -> Self {
        Self {
            bins,
            mean: vec![0.0; 2 * bins],
            std: vec![1.0; 2 * bins],
        }
    }

    /// Population statistics over every frame of every spectrogram.
    pub fn fit<T: Real>(corpus: &[ComplexSpectrogram<T>]) -> Result<Self> {
        Self::fit_with_floor(corpus, 0.0)
    }

    /// Like [`Self::fit`], additionally raising every standard deviation to
    /// at least `relative_floor` times the largest one. Bins that are nearly
    /// silent in the corpus otherwise turn small reconstruction errors into
    /// huge normalized values.
    pub fn fit_with_floor<T: Real>(
        corpus: &[ComplexSpectrogram<T>],
        relative_floor: f64,
    ) -> Result<Self> {
        let first = corpus
            .first()
            .ok_or_else(|| Error::InvalidConfig("cannot fit statistics on an empty corpus".into()))?;
        let bins = first.bins();
        let mut sum = vec![0.0; 2 * bins];
        let mut count = 0usize;
        for c in corpus {
            if c.bins() != bins {
                return Err(Error::ShapeMismatch("corpus mixes bin counts".into()));
            }
            for ((k, _), v) in c.values().indexed_iter() {
                sum[k] += v.re.as_f64();
                sum[bins + k] += v.im.as_f64();
            }
            count += c.frames();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; 2 * bins];
        for c in corpus {
            for ((k, _), v) in c.values().indexed_iter() {
                var[k] += (v.re.as_f64() - mean[k]).powi(2);
                var[bins + k] += (v.im.as_f64() - mean[bins + k]).powi(2);
            }
        }
        let raw: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        let floor = relative_floor * raw.iter().cloned().fold(0.0, f64::max);
        let std = raw.iter().map(|&s| s.max(floor).max(MIN_STD)).collect();
        Ok(Self { bins, mean, std })
    }

    pub fn channels(&self) -> usize {
        2 * self.bins
    }

    pub fn mean_as<T: Real>(&self) -> Vec<T> {
        self.mean.iter().map(|&v| T::of(v)).collect()
    }

    pub fn std_as<T: Real>(&self) -> Vec<T> {
        self.std.iter().map(|&v| T::of(v)).collect()
    }

    fn check(&self, bins: usize) -> Result<()> {
        if bins != self.bins || self.mean.len() != 2 * bins || self.std.len() != 2 * bins {
            return Err(Error::ShapeMismatch(format!(
                "statistics cover {} bins, spectrogram has {bins}",
                self.bins
            )));
        }
        Ok(())
    }
}

/// `(v − mean) / std` per channel, as a `(1, 2F', N)` tensor.
pub fn normalize<T: Real>(c: &ComplexSpectrogram<T>, stats: &NormStats) -> Result<Tensor<T>> {
    let bins = c.bins();
    stats.check(bins)?;
    let mean = stats.mean_as::<T>();
    let std = stats.std_as::<T>();
    let v = c.values();
    Ok(Tensor::from_fn([1, 2 * bins, c.frames()], |_, ch, n| {
        let raw = if ch < bins { v[[ch, n]].re } else { v[[ch - bins, n]].im };
        (raw - mean[ch]) / std[ch]
    }))
}

/// Raw `(B, 2F', N)` layout of complex spectrograms, without normalization.
pub fn to_channels<T: Real>(c: &ComplexSpectrogram<T>) -> Tensor<T> {
    let bins = c.bins();
    let v = c.values();
    Tensor::from_fn([1, 2 * bins, c.frames()], |_, ch, n| {
        if ch < bins {
            v[[ch, n]].re
        } else {
            v[[ch - bins, n]].im
        }
    })
}

/// Reassembles batch item `item` of a raw `(B, 2F', N)` tensor.
pub fn from_channels<T: Real>(
    t: &Tensor<T>,
    item: usize,
    config: StftConfig,
) -> Result<ComplexSpectrogram<T>> {
    let bins = config.bins();
    if t.channels() != 2 * bins || item >= t.batch() {
        return Err(Error::ShapeMismatch(format!(
            "tensor {:?} does not hold item {item} of {bins}-bin spectrograms",
            t.shape()
        )));
    }
    let values = Array2::from_shape_fn((bins, t.length()), |(k, n)| {
        Complex::new(t.get(item, k, n), t.get(item, bins + k, n))
    });
    ComplexSpectrogram::new(values, config)
}

/// Inverse of [`normalize`] for batch item `item`.
pub fn denormalize<T: Real>(
    t: &Tensor<T>,
    item: usize,
    stats: &NormStats,
    config: StftConfig,
) -> Result<ComplexSpectrogram<T>> {
    stats.check(config.bins())?;
    let mean = stats.mean_as::<T>();
    let std = stats.std_as::<T>();
    let scaled = Tensor::from_fn([1, t.channels(), t.length()], |_, ch, n| {
        t.get(item, ch, n) * std[ch] + mean[ch]
    });
    from_channels(&scaled, 0, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::WindowKind;

    fn cfg() -> StftConfig {
        StftConfig::new(8000, 4, 2, WindowKind::Hann, 4).unwrap()
    }

    fn spec(vals: &[(f64, f64)]) -> ComplexSpectrogram<f64> {
        let values = Array2::from_shape_fn((3, 2), |(k, n)| {
            let (re, im) = vals[k * 2 + n];
            Complex::new(re, im)
        });
        ComplexSpectrogram::new(values, cfg()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = spec(&[(1.0, -2.0), (0.5, 0.25), (3.0, 1.0), (-1.0, 0.0), (2.0, 2.0), (0.0, -4.0)]);
        let d = spec(&[(0.0, 1.0), (1.5, 0.5), (-3.0, 2.0), (1.0, 1.0), (0.0, 0.0), (4.0, -1.0)]);
        let stats = NormStats::fit(&[c.clone(), d]).unwrap();
        let t = normalize(&c, &stats).unwrap();
        let back = denormalize(&t, 0, &stats, cfg()).unwrap();
        for (a, b) in back.values().iter().zip(c.values()) {
            assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn identical_corpus_normalizes_to_zero() {
        let c = spec(&[(1.0, -2.0), (1.0, -2.0), (3.0, 1.0), (3.0, 1.0), (2.0, 2.0), (2.0, 2.0)]);
        let stats = NormStats::fit(&[c.clone(), c.clone()]).unwrap();
        assert!(stats.std.iter().all(|&s| s == MIN_STD));
        let t = normalize(&c, &stats).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_corpus_normalizes_to_unit_magnitude() {
        // One frame per spectrogram so each statistic sees exactly two values.
        let cfg = cfg();
        let one = |re: f64, im: f64| {
            ComplexSpectrogram::new(Array2::from_elem((3, 1), Complex::new(re, im)), cfg).unwrap()
        };
        let a = one(1.0, 5.0);
        let b = one(3.0, 5.0);
        let stats = NormStats::fit(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        let ta = normalize(&a, &stats).unwrap();
        let tb = normalize(&b, &stats).unwrap();
        for k in 0..3 {
            assert_eq!(ta.get(0, k, 0), -1.0);
            assert_eq!(tb.get(0, k, 0), 1.0);
            // imaginary parts agree, so they sit at the mean
            assert_eq!(ta.get(0, 3 + k, 0), 0.0);
        }
    }

    #[test]
    fn relative_floor_lifts_quiet_channels() {
        let c = spec(&[(1.0, 0.0), (3.0, 0.0), (1.0, 0.0), (1.001, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        let stats = NormStats::fit_with_floor(&[c], 0.01).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(stats.std[1], 0.01);
        assert_eq!(stats.std[2], 0.01);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(NormStats::fit::<f64>(&[]).is_err());
    }
}
