//! Processing-time benchmark for the reconstruction methods.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::ModelBundle;
use crate::griffinlim::{GriffinLim, GriffinLimOptions, PhaseInit};
use crate::scalar::Real;
use crate::spectral::{magnitude, MagnitudeSpectrogram, StftPlan};
use crate::synth::speech_like;

/// Griffin-Lim iteration count of the baseline method.
pub const GL_BASELINE_ITERS: usize = 400;
/// Runs per (length, method); the median is reported.
pub const DEFAULT_REPEATS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    GriffinLim400,
    Neural,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::GriffinLim400 => "gl",
            Method::Neural => "neural",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gl" => Ok(Method::GriffinLim400),
            "neural" => Ok(Method::Neural),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected gl or neural)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    /// Seconds of audio.
    pub signal_length: f64,
    pub method: Method,
    /// Median wall-clock seconds.
    pub elapsed: f64,
    /// `elapsed / signal_length`.
    pub realtime_factor: f64,
}

/// Least-squares line `y = slope * x + intercept` with its coefficient of
/// determination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidConfig(
            "a linear fit needs at least two (x, y) pairs".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times each method on a synthetic speech-like signal of each length.
///
/// Signal synthesis, the analysis STFT and model construction happen
/// outside the timed region. The `repeats` passes each visit every
/// (length, method) pair, so slow drifts in machine speed hit every length
/// alike; each record holds the median of its `repeats` timings. Every
/// timed run directly follows an untimed run of the same pair, so it sees
/// warm caches rather than whatever the previous pair left behind.
pub fn run_bench<T: Real>(
    lengths: &[f64],
    methods: &[Method],
    model: Option<&ModelBundle<T>>,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig(format!("signal length {bad} must be positive")));
    }
    if methods.contains(&Method::Neural) && model.is_none() {
        return Err(Error::InvalidConfig("the neural method needs a model".into()));
    }
    let stft = model.map(|m| *m.stft_config()).unwrap_or_default();
    let plan = StftPlan::new(stft)?;
    let gl = GriffinLim::new(plan.clone());
    let mut cases = Vec::new();
    for &length in lengths {
        let samples = (length * stft.sample_rate as f64).round() as usize;
        let x = speech_like::<T>(seed, samples, stft.sample_rate);
        let a = magnitude(&plan.stft(&x)?);
        for &method in methods {
            cases.push((length, method, a.clone()));
        }
    }
    let run = |method: Method, a: &MagnitudeSpectrogram<T>| -> Result<()> {
        match (method, model) {
            (Method::GriffinLim400, _) => {
                let opts = GriffinLimOptions {
                    max_iters: GL_BASELINE_ITERS,
                    stop_tol: 0.0,
                    phase_init: PhaseInit::RandomUniform(seed),
                    record_objective: false,
                };
                gl.reconstruct(a, &opts)?;
            }
            (Method::Neural, Some(m)) => {
                m.reconstruct(a, seed)?;
            }
            (Method::Neural, None) => unreachable!("checked above"),
        }
        Ok(())
    };

    let mut times = vec![Vec::with_capacity(repeats); cases.len()];
    for _ in 0..repeats {
        for ((_, method, a), t) in cases.iter().zip(&mut times) {
            run(*method, a)?;
            let start = Instant::now();
            run(*method, a)?;
            t.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        }
    }
    Ok(cases
        .iter()
        .zip(times)
        .map(|((length, method, _), t)| {
            log::debug!("{method} {length} s: runs {t:?}");
            let elapsed = median(t);
            log::info!("{method} {length} s: {elapsed:.4} s");
            BenchRecord {
                signal_length: *length,
                method: *method,
                elapsed,
                realtime_factor: elapsed / length,
            }
        })
        .collect())
}

/// Fit of elapsed time against signal length for each method present.
pub fn fits(records: &[BenchRecord]) -> Result<Vec<(Method, LinearFit)>> {
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter(|r| r.method == m)
                .map(|r| (r.signal_length, r.elapsed))
                .unzip();
            linear_fit(&xs, &ys).map(|f| (m, f))
        })
        .collect()
}

/// CSV with header `signal_length,method,elapsed,realtime_factor`;
/// `method` is `gl` or `neural`, times are in seconds.
pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("signal_length,method,elapsed,realtime_factor\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.signal_length, r.method, r.elapsed, r.realtime_factor
        ));
    }
    out
}
