use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use specrecon::audio::{read_wav, resample, write_wav, DatasetManifest, Split, SEGMENT_LEN, SEGMENT_RATE};
use specrecon::bench::{bench_csv, fits, run_bench, Method};
use specrecon::gan::{evaluate, loss_log_csv, train, ModelBundle, TrainConfig};
use specrecon::griffinlim::{GriffinLim, GriffinLimOptions, PhaseInit};
use specrecon::magfile::{is_magnitude_file, read_magnitude, write_magnitude};
use specrecon::metrics::{snr_db, spectral_convergence_with, MetricsReport};
use specrecon::spectral::{
    combine, magnitude, MagnitudeSpectrogram, PhaseSpectrogram, StftConfig, StftPlan, TimeSignal,
    WindowKind,
};
use specrecon::{Error, Result};

pub const DEFAULT_GL_ITERS: usize = 400;

pub struct ReconstructArgs {
    pub method: Method,
    pub iters: Option<usize>,
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub input: PathBuf,
    pub output: PathBuf,
}

/// Magnitude to reconstruct plus, for WAV input, the reference signal.
struct Input {
    magnitude: MagnitudeSpectrogram<f64>,
    reference: Option<TimeSignal<f64>>,
}

fn load_input(path: &Path, target: Option<&StftConfig>) -> Result<Input> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_magnitude_file(&bytes) {
        let magnitude = read_magnitude::<f64>(path)?;
        if let Some(cfg) = target {
            if magnitude.config() != cfg {
                return Err(Error::ShapeMismatch(format!(
                    "{} uses a different STFT config than the model",
                    path.display()
                )));
            }
        }
        return Ok(Input {
            magnitude,
            reference: None,
        });
    }
    let x = read_wav::<f64>(path)?;
    let cfg = match target {
        Some(cfg) => *cfg,
        None => StftConfig {
            sample_rate: x.sample_rate(),
            ..StftConfig::default()
        },
    };
    let x = resample(&x, cfg.sample_rate)?;
    let plan = StftPlan::new(cfg)?;
    let magnitude = magnitude(&plan.stft(&x)?);
    Ok(Input {
        magnitude,
        reference: Some(x),
    })
}

/// Runs the reconstruction, writes the output WAV and returns the report
/// text.
pub fn reconstruct(args: &ReconstructArgs) -> Result<String> {
    let bundle = match args.method {
        Method::Neural => {
            let path = args.model.as_deref().ok_or_else(|| {
                Error::InvalidConfig("--model is required with --method neural".into())
            })?;
            let mut b = ModelBundle::<f64>::load(path)?;
            if let Some(iters) = args.iters {
                b.gl_warm_iters = iters;
            }
            Some(b)
        }
        Method::GriffinLim400 => None,
    };
    let input = load_input(&args.input, bundle.as_ref().map(|b| b.stft_config()))?;
    let a = &input.magnitude;
    let plan = StftPlan::new(*a.config())?;

    let start = Instant::now();
    let (spectrogram, signal, iters) = match &bundle {
        None => {
            let iters = args.iters.unwrap_or(DEFAULT_GL_ITERS);
            let opts = GriffinLimOptions {
                max_iters: iters,
                stop_tol: 0.0,
                phase_init: PhaseInit::RandomUniform(args.seed),
                record_objective: false,
            };
            let r = GriffinLim::new(plan.clone()).reconstruct(a, &opts)?;
            (r.final_spectrogram, r.final_signal, iters)
        }
        Some(b) => {
            let r = b.reconstruct(a, args.seed)?;
            (r.output, r.signal, b.gl_warm_iters)
        }
    };
    let elapsed = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

    let report = MetricsReport {
        consistency_residual: plan.consistency_residual(&spectrogram)?,
        spectral_convergence: spectral_convergence_with(&plan, a, &signal)?,
        snr_db: interior_snr(input.reference.as_ref(), &signal, a.config().edge_len()),
        elapsed,
    };
    if !report.consistency_residual.is_finite() || !report.spectral_convergence.is_finite() {
        return Err(Error::NonFiniteActivation("reconstruction metrics".into()));
    }
    write_wav(&args.output, &signal)?;

    let cfg = a.config();
    let mut text = String::new();
    let _ = writeln!(text, "method = {}", args.method);
    let _ = writeln!(text, "iters = {iters}");
    let _ = writeln!(text, "seed = {}", args.seed);
    let _ = writeln!(text, "sample_rate = {}", cfg.sample_rate);
    let _ = writeln!(text, "bins = {}", a.bins());
    let _ = writeln!(text, "frames = {}", a.frames());
    let _ = writeln!(text, "samples = {}", signal.len());
    text.push_str(&report.to_string());
    Ok(text)
}

/// SNR against the reference over the samples at least `edge` away from
/// both ends. The least-squares inverse amplifies inconsistencies where
/// the squared-window sum is small, which would otherwise dominate.
fn interior_snr(
    reference: Option<&TimeSignal<f64>>,
    estimate: &TimeSignal<f64>,
    edge: usize,
) -> Option<f64> {
    let reference = reference?;
    let len = reference.len().min(estimate.len());
    if len <= 2 * edge {
        return None;
    }
    let cut = |x: &TimeSignal<f64>| {
        TimeSignal::new(x.samples()[edge..len - edge].to_vec(), x.sample_rate())
            .expect("non-empty interior")
    };
    let r = cut(reference);
    (r.energy() > 0.0).then(|| snr_db(&r, &cut(estimate)))
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
}

/// Default loss-log path: the bundle path with `.losses.csv` appended.
pub fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".losses.csv");
    PathBuf::from(s)
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn train_model(args: &TrainArgs) -> Result<String> {
    let cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if cfg.stft.sample_rate != SEGMENT_RATE {
        return Err(Error::InvalidConfig(format!(
            "training runs at {SEGMENT_RATE} Hz, config asks for {} Hz",
            cfg.stft.sample_rate
        )));
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    if manifest.split(Split::Train).next().is_none() {
        return Err(Error::malformed(&args.manifest, "manifest has no train entries"));
    }
    let segments = manifest.load_segments::<f32>(Split::Train)?;
    let signals: Vec<TimeSignal<f32>> = segments.into_iter().map(|s| s.samples).collect();
    let frames = cfg.stft.frames_for(SEGMENT_LEN).ok_or(Error::SignalTooShort {
        len: SEGMENT_LEN,
        needed: cfg.stft.win_len,
    })?;
    let init = ModelBundle::<f32>::initialize(&cfg, frames)?;
    log::info!("training on {} segments", signals.len());
    let outcome = train(&signals, init.generator, init.discriminator, &cfg)?;

    let csv = loss_log_csv(&outcome.log)?;
    let log_path = args.log.clone().unwrap_or_else(|| default_log_path(&args.out));
    write_atomically(&args.out, &outcome.bundle.to_bytes()?)?;
    write_atomically(&log_path, csv.as_bytes())?;

    let mut text = String::new();
    let _ = writeln!(text, "segments = {}", signals.len());
    let _ = writeln!(text, "steps = {}", outcome.log.len());
    if let Some(last) = outcome.log.last() {
        let _ = writeln!(text, "V = {}", last.v);
        let _ = writeln!(text, "U = {}", last.u);
        let _ = writeln!(text, "I = {}", last.i);
        let _ = writeln!(text, "G_total = {}", last.g_total);
    }
    if manifest.split(Split::Eval).next().is_some() {
        let eval: Vec<TimeSignal<f32>> = manifest
            .load_segments::<f32>(Split::Eval)?
            .into_iter()
            .map(|s| s.samples)
            .collect();
        let summary = evaluate(&outcome.bundle, &eval, cfg.seed)?;
        let _ = writeln!(text, "eval_warm_spectral_convergence = {:.6e}", summary.warm);
        let _ = writeln!(text, "eval_output_spectral_convergence = {:.6e}", summary.output);
    }
    let _ = writeln!(text, "bundle = {}", args.out.display());
    let _ = writeln!(text, "loss_log = {}", log_path.display());
    Ok(text)
}

pub struct BenchArgs {
    pub lengths: Vec<f64>,
    pub methods: Vec<Method>,
    pub csv: PathBuf,
    pub model: Option<PathBuf>,
    pub repeats: usize,
    pub seed: u64,
}

/// Longest signal the benchmark accepts, in seconds.
pub const MAX_BENCH_LENGTH: f64 = 6.0;

pub fn bench(args: &BenchArgs) -> Result<String> {
    if let Some(&l) = args.lengths.iter().find(|&&l| l > MAX_BENCH_LENGTH) {
        return Err(Error::InvalidConfig(format!(
            "length {l} s exceeds the {MAX_BENCH_LENGTH} s limit"
        )));
    }
    let bundle = if args.methods.contains(&Method::Neural) {
        Some(match &args.model {
            Some(path) => ModelBundle::<f32>::load(path)?,
            None => {
                let cfg = TrainConfig::default();
                let frames = cfg.stft.frames_for(SEGMENT_LEN).expect("one second fits a frame");
                ModelBundle::<f32>::initialize(&cfg, frames)?
            }
        })
    } else {
        None
    };
    let records = run_bench(&args.lengths, &args.methods, bundle.as_ref(), args.repeats, args.seed)?;
    let csv = bench_csv(&records);
    fs::write(&args.csv, &csv).map_err(|e| Error::io(&args.csv, e))?;

    let mut text = csv;
    if args.lengths.len() >= 2 {
        for (method, fit) in fits(&records)? {
            let _ = writeln!(
                text,
                "fit {method}: slope = {:.6e} s/s, intercept = {:.6e} s, r_squared = {:.6}",
                fit.slope, fit.intercept, fit.r_squared
            );
        }
    }
    Ok(text)
}

pub struct StftArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: Option<usize>,
    pub window: WindowKind,
}

/// Magnitude spectrogram of a WAV file, written as a magnitude file.
pub fn stft(args: &StftArgs) -> Result<String> {
    let x = read_wav::<f64>(&args.input)?;
    let cfg = StftConfig::new(
        x.sample_rate(),
        args.win_len,
        args.hop,
        args.window,
        args.fft_size.unwrap_or(args.win_len),
    )?;
    let a = magnitude(&StftPlan::new(cfg)?.stft(&x)?);
    write_magnitude(&args.output, &a)?;
    Ok(format!("bins = {}\nframes = {}\n", a.bins(), a.frames()))
}

/// Zero-phase least-squares synthesis of a magnitude file.
pub fn istft(input: &Path, output: &Path) -> Result<String> {
    let a = read_magnitude::<f64>(input)?;
    let phase = PhaseSpectrogram::ones(*a.config(), a.frames());
    let x = StftPlan::new(*a.config())?.istft(&combine(&a, &phase)?)?;
    write_wav(output, &x)?;
    Ok(format!("samples = {}\nsample_rate = {}\n", x.len(), x.sample_rate()))
}
