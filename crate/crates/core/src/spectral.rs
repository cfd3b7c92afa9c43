//! Least-squares STFT analysis/synthesis and the consistency projection.
//!
//! Frames lie fully inside the signal: frame `n` covers samples
//! `[n * hop, n * hop + win_len)` and no zero-padding is applied at the
//! edges. Spectrograms store the non-redundant half spectrum
//! (`fft_size / 2 + 1` bins); norms double-weight the interior bins so that
//! they agree with full-spectrum norms.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Squared-window overlap-add values below this are treated as zero.
pub const WINDOW_SUM_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Blackman,
    Hann,
    Rectangular,
}

/// Framing parameters of the STFT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 16 kHz, 64 ms Blackman window, 32 ms hop, no zero padding.
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 1024,
            hop: 512,
            window: WindowKind::Blackman,
            fft_size: 1024,
        }
    }
}

impl StftConfig {
    pub fn new(
        sample_rate: u32,
        win_len: usize,
        hop: usize,
        window: WindowKind,
        fft_size: usize,
    ) -> Result<Self> {
        let cfg = Self {
            sample_rate,
            win_len,
            hop,
            window,
            fft_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if self.win_len == 0 || self.win_len % 2 != 0 {
            return fail(format!("win_len {} must be a positive even number", self.win_len));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return fail(format!("hop {} must be in 1..={}", self.hop, self.win_len));
        }
        if self.fft_size < self.win_len || self.fft_size % 2 != 0 {
            return fail(format!(
                "fft_size {} must be even and at least win_len {}",
                self.fft_size, self.win_len
            ));
        }
        Ok(())
    }

    /// Number of stored frequency bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        (len >= self.win_len).then(|| (len - self.win_len) / self.hop + 1)
    }

    /// Length of the signal synthesized from `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.win_len
    }

    /// Samples at each edge of a synthesized signal that are not fully
    /// overlapped by frames.
    pub fn edge_len(&self) -> usize {
        self.win_len - self.hop
    }

    /// Weight of bin `k` in half-spectrum norms.
    pub fn bin_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.fft_size / 2 {
            1.0
        } else {
            2.0
        }
    }
}

/// Samples the configured window at `win_len` points (symmetric form).
pub fn make_window<T: Real>(cfg: &StftConfig) -> Vec<T> {
    let n = cfg.win_len;
    let denom = (n - 1).max(1) as f64;
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
            let w = match cfg.window {
                WindowKind::Rectangular => 1.0,
                WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                WindowKind::Blackman => 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos(),
            };
            T::of(w)
        })
        .collect()
}

/// A real-valued sampled waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSignal<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Real> TimeSignal<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![T::zero(); len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|&v| v * v).sum()
    }

    /// Multiplies every sample by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            samples: self.samples.iter().map(|&v| v * s).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Converts the sample type.
    pub fn cast<U: Real>(&self) -> TimeSignal<U> {
        TimeSignal {
            samples: self.samples.iter().map(|v| U::of(v.as_f64())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn check_finite<T: Real>(values: &Array2<Complex<T>>) -> Result<()> {
    if values.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidConfig("spectrogram has non-finite values".into()))
    }
}

fn check_shape<T>(values: &Array2<T>, cfg: &StftConfig) -> Result<()> {
    let (bins, frames) = values.dim();
    if bins != cfg.bins() || frames == 0 {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram is {bins}x{frames}, config needs {} bins and at least one frame",
            cfg.bins()
        )));
    }
    Ok(())
}

/// Half-spectrum complex STFT coefficients, `bins x frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T> {
    values: Array2<Complex<T>>,
    config: StftConfig,
}

impl<T: Real> ComplexSpectrogram<T> {
    pub fn new(values: Array2<Complex<T>>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        check_shape(&values, &config)?;
        check_finite(&values)?;
        Ok(Self { values, config })
    }

    pub fn zeros(config: StftConfig, frames: usize) -> Self {
        Self {
            values: Array2::zeros((config.bins(), frames)),
            config,
        }
    }

    pub fn values(&self) -> &Array2<Complex<T>> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex<T>> {
        self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Squared ℓ2 norm of the implied full (Hermitian) spectrum.
    pub fn norm_sqr(&self) -> T {
        weighted_norm_sqr(&self.values, &self.config)
    }

    /// Squared full-spectrum distance to `other`.
    pub fn distance_sqr(&self, other: &Self) -> Result<T> {
        same_shape(self.values.dim(), other.values.dim())?;
        let diff = &self.values - &other.values;
        Ok(weighted_norm_sqr(&diff, &self.config))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            values: self.values.mapv(|c| c * s),
            config: self.config,
        }
    }

    pub fn cast<U: Real>(&self) -> ComplexSpectrogram<U> {
        ComplexSpectrogram {
            values: self
                .values
                .mapv(|c| Complex::new(U::of(c.re.as_f64()), U::of(c.im.as_f64()))),
            config: self.config,
        }
    }
}

fn same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )))
    }
}

pub(crate) fn weighted_norm_sqr<T: Real>(values: &Array2<Complex<T>>, cfg: &StftConfig) -> T {
    let mut total = T::zero();
    for (k, row) in values.rows().into_iter().enumerate() {
        let row_sum: T = row.iter().map(|c| c.norm_sqr()).sum();
        total = total + T::of(cfg.bin_weight(k)) * row_sum;
    }
    total
}

/// Elementwise modulus of a complex spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram<T> {
    values: Array2<T>,
    config: StftConfig,
}

impl<T: Real> MagnitudeSpectrogram<T> {
    pub fn new(values: Array2<T>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        check_shape(&values, &config)?;
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidConfig(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn norm_sqr(&self) -> T {
        let mut total = T::zero();
        for (k, row) in self.values.rows().into_iter().enumerate() {
            let s: T = row.iter().map(|&v| v * v).sum();
            total = total + T::of(self.config.bin_weight(k)) * s;
        }
        total
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            values: self.values.mapv(|v| v * s),
            config: self.config,
        }
    }
}

/// Unit-modulus phase factors.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpectrogram<T> {
    values: Array2<Complex<T>>,
    config: StftConfig,
}

impl<T: Real> PhaseSpectrogram<T> {
    /// Builds a phase field from angles in radians.
    pub fn from_angles(angles: &Array2<T>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        check_shape(angles, &config)?;
        Ok(Self {
            values: angles.mapv(|t| Complex::new(t.cos(), t.sin())),
            config,
        })
    }

    /// All phases equal to `1 + 0j`.
    pub fn ones(config: StftConfig, frames: usize) -> Self {
        Self {
            values: Array2::from_elem((config.bins(), frames), Complex::new(T::one(), T::zero())),
            config,
        }
    }

    pub fn values(&self) -> &Array2<Complex<T>> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Largest elementwise distance to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        same_shape(self.values.dim(), other.values.dim())?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), T::max))
    }
}

/// Elementwise `|c|`.
pub fn magnitude<T: Real>(c: &ComplexSpectrogram<T>) -> MagnitudeSpectrogram<T> {
    MagnitudeSpectrogram {
        values: c.values.mapv(|v| v.norm()),
        config: c.config,
    }
}

/// `c / |c|`, with zero mapped to `1 + 0j`.
pub fn phase<T: Real>(c: &ComplexSpectrogram<T>) -> PhaseSpectrogram<T> {
    PhaseSpectrogram {
        values: c.values.mapv(unit_phase),
        config: c.config,
    }
}

#[inline]
pub(crate) fn unit_phase<T: Real>(v: Complex<T>) -> Complex<T> {
    let r = v.norm();
    if r > T::zero() {
        v / r
    } else {
        Complex::new(T::one(), T::zero())
    }
}

/// `a ⊙ φ`.
pub fn combine<T: Real>(
    a: &MagnitudeSpectrogram<T>,
    phi: &PhaseSpectrogram<T>,
) -> Result<ComplexSpectrogram<T>> {
    same_shape(a.values.dim(), phi.values.dim())?;
    if a.config != phi.config {
        return Err(Error::ShapeMismatch(
            "magnitude and phase use different STFT configs".into(),
        ));
    }
    let mut values = Array2::zeros(a.values.dim());
    Zip::from(&mut values)
        .and(&a.values)
        .and(&phi.values)
        .for_each(|out, &m, &p| *out = p * m);
    Ok(ComplexSpectrogram {
        values,
        config: a.config,
    })
}

/// Precomputed window and FFT plans for one [`StftConfig`].
///
/// Immutable after construction; every method allocates its own buffers, so
/// one plan can be shared across threads.
#[derive(Clone)]
pub struct StftPlan<T: Real> {
    config: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for StftPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl<T: Real> StftPlan<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: make_window(&config),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Analysis: window each frame and keep bins `0..=fft_size/2`.
    pub fn stft(&self, x: &TimeSignal<T>) -> Result<ComplexSpectrogram<T>> {
        if x.sample_rate() != self.config.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "signal is sampled at {} Hz, config expects {} Hz",
                x.sample_rate(),
                self.config.sample_rate
            )));
        }
        let frames = self
            .config
            .frames_for(x.len())
            .ok_or(Error::SignalTooShort {
                len: x.len(),
                needed: self.config.win_len,
            })?;
        Ok(ComplexSpectrogram {
            values: self.analyze(x.samples(), frames),
            config: self.config,
        })
    }

    pub(crate) fn analyze(&self, samples: &[T], frames: usize) -> Array2<Complex<T>> {
        let bins = self.config.bins();
        let mut values = Array2::zeros((bins, frames));
        let mut buf = self.frame_buffer();
        let mut scratch = self.scratch();
        for n in 0..frames {
            self.analyze_frame(samples, n, &mut buf, &mut scratch);
            for k in 0..bins {
                values[[k, n]] = buf[k];
            }
        }
        values
    }

    /// A zeroed buffer of `fft_size` coefficients.
    pub(crate) fn frame_buffer(&self) -> Vec<Complex<T>> {
        vec![Complex::new(T::zero(), T::zero()); self.config.fft_size]
    }

    /// Scratch space for the in-place transforms of this plan.
    pub(crate) fn scratch(&self) -> Vec<Complex<T>> {
        let len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        vec![Complex::new(T::zero(), T::zero()); len]
    }

    /// Windows frame `n` of `samples` into `buf` and transforms it in place.
    pub(crate) fn analyze_frame(
        &self,
        samples: &[T],
        n: usize,
        buf: &mut [Complex<T>],
        scratch: &mut [Complex<T>],
    ) {
        let start = n * self.config.hop;
        let win_len = self.config.win_len;
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = if j < win_len {
                Complex::new(samples[start + j] * self.window[j], T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            };
        }
        self.forward.process_with_scratch(buf, scratch);
    }

    /// Inverse-transforms the half spectrum `coef(0..bins)` of frame `n`,
    /// windows it and adds it into `out`. The division by the squared-window
    /// sum is left to the caller.
    pub(crate) fn overlap_add_frame(
        &self,
        coef: impl Fn(usize) -> Complex<T>,
        n: usize,
        out: &mut [T],
        buf: &mut [Complex<T>],
        scratch: &mut [Complex<T>],
    ) {
        let cfg = &self.config;
        let scale = T::one() / T::of(cfg.fft_size as f64);
        let half = cfg.fft_size / 2;
        for (k, slot) in buf.iter_mut().take(cfg.bins()).enumerate() {
            *slot = coef(k);
        }
        for k in 1..half {
            buf[cfg.fft_size - k] = coef(k).conj();
        }
        self.inverse.process_with_scratch(buf, scratch);
        let start = n * cfg.hop;
        for j in 0..cfg.win_len {
            out[start + j] = out[start + j] + buf[j].re * scale * self.window[j];
        }
    }

    /// Squared-window overlap-add for `frames` frames.
    pub fn window_sum(&self, frames: usize) -> Vec<T> {
        let cfg = &self.config;
        let mut sum = vec![T::zero(); cfg.signal_len(frames)];
        for n in 0..frames {
            let start = n * cfg.hop;
            for (j, &w) in self.window.iter().enumerate() {
                sum[start + j] = sum[start + j] + w * w;
            }
        }
        sum
    }

    /// Reciprocal of the squared-window overlap-add, zero where it vanishes.
    ///
    /// Fails if the sum vanishes inside the fully-overlapped region.
    pub(crate) fn inverse_window_sum(&self, frames: usize) -> Result<Vec<T>> {
        let sum = self.window_sum(frames);
        let edge = self.config.edge_len();
        let len = sum.len();
        let floor = T::of(WINDOW_SUM_FLOOR);
        let mut inv = Vec::with_capacity(len);
        for (t, &s) in sum.iter().enumerate() {
            if s < floor {
                let interior = t >= edge && t + edge < len;
                if interior {
                    return Err(Error::DegenerateWindowSum {
                        index: t,
                        value: s.as_f64(),
                    });
                }
                inv.push(T::zero());
            } else {
                inv.push(T::one() / s);
            }
        }
        Ok(inv)
    }

    /// Least-squares synthesis: inverse transform each frame, window,
    /// overlap-add, then divide by the overlap-added squared window.
    pub fn istft(&self, c: &ComplexSpectrogram<T>) -> Result<TimeSignal<T>> {
        if c.config != self.config {
            return Err(Error::ShapeMismatch(
                "spectrogram was produced with a different STFT config".into(),
            ));
        }
        let samples = self.synthesize(&c.values)?;
        Ok(TimeSignal {
            samples,
            sample_rate: self.config.sample_rate,
        })
    }

    pub(crate) fn synthesize(&self, values: &Array2<Complex<T>>) -> Result<Vec<T>> {
        let cfg = &self.config;
        let (bins, frames) = values.dim();
        if bins != cfg.bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram has {bins} bins, config needs {}",
                cfg.bins()
            )));
        }
        let inv = self.inverse_window_sum(frames)?;
        let mut out = vec![T::zero(); cfg.signal_len(frames)];
        let mut buf = self.frame_buffer();
        let mut scratch = self.scratch();
        for n in 0..frames {
            self.overlap_add_frame(|k| values[[k, n]], n, &mut out, &mut buf, &mut scratch);
        }
        for (o, s) in out.iter_mut().zip(&inv) {
            *o = *o * *s;
        }
        Ok(out)
    }

    /// Adjoint of [`Self::synthesize`] with respect to the real and imaginary
    /// parts of each stored coefficient.
    ///
    /// Returns `d(loss)/d(Re c) + j d(loss)/d(Im c)` given `d(loss)/d(signal)`.
    pub(crate) fn synthesize_adjoint(
        &self,
        grad_signal: &[T],
        frames: usize,
    ) -> Result<Array2<Complex<T>>> {
        let cfg = &self.config;
        if grad_signal.len() != cfg.signal_len(frames) {
            return Err(Error::ShapeMismatch(format!(
                "signal gradient has {} samples, expected {}",
                grad_signal.len(),
                cfg.signal_len(frames)
            )));
        }
        let inv = self.inverse_window_sum(frames)?;
        let scaled: Vec<T> = grad_signal.iter().zip(&inv).map(|(&g, &s)| g * s).collect();
        let bins = cfg.bins();
        let half = cfg.fft_size / 2;
        let f = T::of(cfg.fft_size as f64);
        let two = T::of(2.0);
        let mut grads = Array2::zeros((bins, frames));
        let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
        for n in 0..frames {
            let start = n * cfg.hop;
            for (j, slot) in buf.iter_mut().enumerate() {
                *slot = if j < cfg.win_len {
                    Complex::new(scaled[start + j] * self.window[j], T::zero())
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                grads[[k, n]] = if k == 0 || k == half {
                    Complex::new(buf[k].re / f, T::zero())
                } else {
                    buf[k] * (two / f)
                };
            }
        }
        Ok(grads)
    }

    /// `stft(istft(c))`: orthogonal projection onto consistent spectrograms.
    pub fn project_consistent(&self, c: &ComplexSpectrogram<T>) -> Result<ComplexSpectrogram<T>> {
        let x = self.istft(c)?;
        Ok(ComplexSpectrogram {
            values: self.analyze(x.samples(), c.frames()),
            config: self.config,
        })
    }

    /// `‖c − P(c)‖²` over the implied full spectrum.
    pub fn consistency_residual(&self, c: &ComplexSpectrogram<T>) -> Result<T> {
        let p = self.project_consistent(c)?;
        c.distance_sqr(&p)
    }
}

/// One-shot [`StftPlan::stft`].
pub fn stft<T: Real>(x: &TimeSignal<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    StftPlan::new(*cfg)?.stft(x)
}

/// One-shot [`StftPlan::istft`].
pub fn istft<T: Real>(c: &ComplexSpectrogram<T>) -> Result<TimeSignal<T>> {
    StftPlan::new(c.config)?.istft(c)
}

/// One-shot [`StftPlan::project_consistent`].
pub fn project_consistent<T: Real>(c: &ComplexSpectrogram<T>) -> Result<ComplexSpectrogram<T>> {
    StftPlan::new(c.config)?.project_consistent(c)
}

/// One-shot [`StftPlan::consistency_residual`].
pub fn consistency_residual<T: Real>(c: &ComplexSpectrogram<T>) -> Result<T> {
    StftPlan::new(c.config)?.consistency_residual(c)
}
