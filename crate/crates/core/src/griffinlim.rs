//! Griffin-Lim phase reconstruction viewed as majorization-minimization.
//!
//! The objective is the squared distance between `a ⊙ φ` and its projection
//! onto consistent spectrograms. Each step evaluates the projection (the
//! auxiliary point where the majorizer touches the objective) and then
//! replaces the phase with the phase of that point, so the objective can
//! never increase.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{
    combine, phase, unit_phase, ComplexSpectrogram, MagnitudeSpectrogram, PhaseSpectrogram, StftPlan,
    TimeSignal,
};

/// How the initial phase is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseInit<T> {
    ZeroPhase,
    /// Independent angles drawn uniformly from `[0, 2π)`.
    RandomUniform(u64),
    Provided(PhaseSpectrogram<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GriffinLimOptions<T> {
    pub max_iters: usize,
    /// Stop once the relative objective decrease of a step falls below this.
    /// Zero runs every iteration.
    pub stop_tol: f64,
    pub phase_init: PhaseInit<T>,
    pub record_objective: bool,
}

impl<T> Default for GriffinLimOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 400,
            stop_tol: 0.0,
            phase_init: PhaseInit::RandomUniform(0),
            record_objective: true,
        }
    }
}

impl<T> GriffinLimOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GriffinLimReport<T: Real> {
    /// Objective before the first step followed by one value per step.
    /// Empty when recording is disabled.
    pub objective_trace: Vec<T>,
    pub iterations_run: usize,
    /// The last projected (consistent) spectrogram.
    pub final_spectrogram: ComplexSpectrogram<T>,
    pub final_signal: TimeSignal<T>,
}

/// Draws the initial phase field.
pub fn initial_phase<T: Real>(
    a: &MagnitudeSpectrogram<T>,
    init: &PhaseInit<T>,
) -> Result<PhaseSpectrogram<T>> {
    let cfg = *a.config();
    match init {
        PhaseInit::ZeroPhase => Ok(PhaseSpectrogram::ones(cfg, a.frames())),
        PhaseInit::RandomUniform(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let tau = std::f64::consts::TAU;
            let angles = Array2::from_shape_simple_fn(a.values().dim(), || {
                T::of(rng.random_range(0.0..tau))
            });
            PhaseSpectrogram::from_angles(&angles, cfg)
        }
        PhaseInit::Provided(phi) => {
            if phi.values().dim() != a.values().dim() || phi.config() != a.config() {
                return Err(Error::ShapeMismatch(
                    "provided phase does not match the magnitude".into(),
                ));
            }
            Ok(phi.clone())
        }
    }
}

/// Griffin-Lim driver bound to one STFT configuration.
#[derive(Clone, Debug)]
pub struct GriffinLim<T: Real> {
    plan: StftPlan<T>,
}

impl<T: Real> GriffinLim<T> {
    pub fn new(plan: StftPlan<T>) -> Self {
        Self { plan }
    }

    pub fn plan(&self) -> &StftPlan<T> {
        &self.plan
    }

    fn check(&self, a: &MagnitudeSpectrogram<T>) -> Result<()> {
        if a.config() != self.plan.config() {
            return Err(Error::ShapeMismatch(
                "magnitude was produced with a different STFT config".into(),
            ));
        }
        Ok(())
    }

    /// `J(φ) = ‖a⊙φ − P(a⊙φ)‖²`.
    pub fn objective(&self, a: &MagnitudeSpectrogram<T>, phi: &PhaseSpectrogram<T>) -> Result<T> {
        self.check(a)?;
        self.plan.consistency_residual(&combine(a, phi)?)
    }

    /// One MM step: project `a⊙φ`, then take its phase.
    pub fn step(
        &self,
        a: &MagnitudeSpectrogram<T>,
        phi: &PhaseSpectrogram<T>,
    ) -> Result<(PhaseSpectrogram<T>, ComplexSpectrogram<T>)> {
        self.check(a)?;
        let projected = self.plan.project_consistent(&combine(a, phi)?)?;
        Ok((phase(&projected), projected))
    }

    pub fn reconstruct(
        &self,
        a: &MagnitudeSpectrogram<T>,
        opts: &GriffinLimOptions<T>,
    ) -> Result<GriffinLimReport<T>> {
        opts.validate()?;
        self.check(a)?;
        let track = opts.record_objective || opts.stop_tol > 0.0;
        let mut phi = initial_phase(a, &opts.phase_init)?;
        if !track {
            let final_spectrogram = self.iterate(a, &phi, opts.max_iters)?;
            let final_signal = self.plan.istft(&final_spectrogram)?;
            return Ok(GriffinLimReport {
                objective_trace: Vec::new(),
                iterations_run: opts.max_iters,
                final_spectrogram,
                final_signal,
            });
        }
        let mut trace = Vec::new();
        let mut current = if track {
            let j = self.objective(a, &phi)?;
            trace.push(j);
            Some(j)
        } else {
            None
        };

        let mut last = None;
        let mut iterations = 0;
        for _ in 0..opts.max_iters {
            let (next_phi, projected) = self.step(a, &phi)?;
            phi = next_phi;
            last = Some(projected);
            iterations += 1;
            if let Some(prev) = current {
                let j = self.objective(a, &phi)?;
                trace.push(j);
                current = Some(j);
                if opts.stop_tol > 0.0 {
                    let prev = prev.as_f64();
                    let decrease = if prev > 0.0 {
                        (prev - j.as_f64()) / prev
                    } else {
                        0.0
                    };
                    if decrease < opts.stop_tol {
                        break;
                    }
                }
            }
        }

        let final_spectrogram = last.expect("max_iters >= 1");
        let final_signal = self.plan.istft(&final_spectrogram)?;
        Ok(GriffinLimReport {
            objective_trace: if opts.record_objective { trace } else { Vec::new() },
            iterations_run: iterations,
            final_spectrogram,
            final_signal,
        })
    }
}

impl<T: Real> GriffinLim<T> {
    /// `iters` steps from `phi` without objective evaluations, returning the
    /// last projection. Performs the same arithmetic as repeated
    /// [`GriffinLim::step`] calls, on one frame-major working buffer and
    /// without per-step allocation.
    fn iterate(
        &self,
        a: &MagnitudeSpectrogram<T>,
        phi: &PhaseSpectrogram<T>,
        iters: usize,
    ) -> Result<ComplexSpectrogram<T>> {
        let plan = &self.plan;
        let (bins, frames) = a.values().dim();
        let inv = plan.inverse_window_sum(frames)?;
        let mut mag = Vec::with_capacity(bins * frames);
        let mut c = Vec::with_capacity(bins * frames);
        for n in 0..frames {
            for k in 0..bins {
                let m = a.values()[[k, n]];
                mag.push(m);
                c.push(phi.values()[[k, n]] * m);
            }
        }
        let mut x = vec![T::zero(); inv.len()];
        let mut buf = plan.frame_buffer();
        let mut scratch = plan.scratch();
        for it in 0..iters {
            x.iter_mut().for_each(|v| *v = T::zero());
            for (n, frame) in c.chunks_exact(bins).enumerate() {
                plan.overlap_add_frame(|k| frame[k], n, &mut x, &mut buf, &mut scratch);
            }
            for (v, s) in x.iter_mut().zip(&inv) {
                *v = *v * *s;
            }
            let last = it + 1 == iters;
            for (n, (frame, m)) in c.chunks_exact_mut(bins).zip(mag.chunks_exact(bins)).enumerate() {
                plan.analyze_frame(&x, n, &mut buf, &mut scratch);
                if last {
                    frame.copy_from_slice(&buf[..bins]);
                } else {
                    for ((out, &v), &m) in frame.iter_mut().zip(&buf[..bins]).zip(m) {
                        *out = unit_phase(v) * m;
                    }
                }
            }
        }
        let values = Array2::from_shape_fn((bins, frames), |(k, n)| c[n * bins + k]);
        ComplexSpectrogram::new(values, *a.config())
    }
}

/// One-shot [`GriffinLim::objective`].
pub fn objective<T: Real>(a: &MagnitudeSpectrogram<T>, phi: &PhaseSpectrogram<T>) -> Result<T> {
    GriffinLim::new(StftPlan::new(*a.config())?).objective(a, phi)
}

/// One-shot [`GriffinLim::step`].
pub fn gl_step<T: Real>(
    a: &MagnitudeSpectrogram<T>,
    phi: &PhaseSpectrogram<T>,
) -> Result<(PhaseSpectrogram<T>, ComplexSpectrogram<T>)> {
    GriffinLim::new(StftPlan::new(*a.config())?).step(a, phi)
}

/// One-shot [`GriffinLim::reconstruct`].
pub fn reconstruct<T: Real>(
    a: &MagnitudeSpectrogram<T>,
    opts: &GriffinLimOptions<T>,
) -> Result<GriffinLimReport<T>> {
    GriffinLim::new(StftPlan::new(*a.config())?).reconstruct(a, opts)
}
