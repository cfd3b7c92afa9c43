//! Reconstruction-quality measures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{magnitude, MagnitudeSpectrogram, StftPlan, TimeSignal};

/// `‖a − |STFT(x)|‖ / ‖a‖` over the stored half spectrum. Zero when both
/// norms vanish.
pub fn spectral_convergence<T: Real>(a: &MagnitudeSpectrogram<T>, x: &TimeSignal<T>) -> Result<f64> {
    let plan = StftPlan::new(*a.config())?;
    spectral_convergence_with(&plan, a, x)
}

pub fn spectral_convergence_with<T: Real>(
    plan: &StftPlan<T>,
    a: &MagnitudeSpectrogram<T>,
    x: &TimeSignal<T>,
) -> Result<f64> {
    let got = magnitude(&plan.stft(x)?);
    if got.values().dim() != a.values().dim() {
        return Err(Error::ShapeMismatch(format!(
            "signal gives {:?} bins x frames, target has {:?}",
            got.values().dim(),
            a.values().dim()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &g) in a.values().iter().zip(got.values()) {
        let (t, g) = (t.as_f64(), g.as_f64());
        num += (t - g) * (t - g);
        den += t * t;
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// `10 log10(‖r‖² / ‖r − e‖²)` over the common prefix of both signals.
pub fn snr_db<T: Real>(reference: &TimeSignal<T>, estimate: &TimeSignal<T>) -> f64 {
    let mut sig = 0.0;
    let mut err = 0.0;
    for (&r, &e) in reference.samples().iter().zip(estimate.samples()) {
        let (r, e) = (r.as_f64(), e.as_f64());
        sig += r * r;
        err += (r - e) * (r - e);
    }
    10.0 * (sig / err).log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Consistency residual of the output spectrogram.
    pub consistency_residual: f64,
    pub spectral_convergence: f64,
    pub snr_db: Option<f64>,
    /// Seconds.
    pub elapsed: f64,
}

impl fmt::Display for MetricsReport {
    /// One `key = value` line per field; `snr_db` is omitted when absent.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "consistency_residual = {:.6e}", self.consistency_residual)?;
        writeln!(f, "spectral_convergence = {:.6e}", self.spectral_convergence)?;
        if let Some(snr) = self.snr_db {
            writeln!(f, "snr_db = {snr:.3}")?;
        }
        writeln!(f, "elapsed = {:.6}", self.elapsed)
    }
}
