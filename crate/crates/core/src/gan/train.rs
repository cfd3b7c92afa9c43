//! Model bundle, warm start, inference helpers and the adversarial loop.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::augment_phase;
use super::losses::{loss_i_on_tape, loss_u_on_tape, loss_v_on_tape};
use super::nets::{default_generator_specs, DiscriminatorConfig, DiscriminatorNet, GeneratorNet};
use super::norm::{denormalize, normalize, to_channels, NormStats};
use crate::error::{Error, Result};
use crate::griffinlim::{initial_phase, GriffinLim, GriffinLimOptions, PhaseInit};
use crate::metrics::spectral_convergence_with;
use crate::nn::{bundle, LayerSpec, Param, RmsProp, RmsPropConfig, Tape, Tensor, Var};
use crate::scalar::Real;
use crate::spectral::{
    combine, magnitude, ComplexSpectrogram, MagnitudeSpectrogram, StftConfig, StftPlan, TimeSignal,
};

/// Training hyperparameters. Every field has a default, so a TOML file only
/// needs the values it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the feature-matching term in the generator objective.
    pub lambda: f64,
    /// One weight per discriminator feature; `None` means 0 for the
    /// waveform and 1 for every layer.
    pub feature_weights: Option<Vec<f64>>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub gl_warm_iters: usize,
    pub seed: u64,
    pub d_steps_per_g_step: usize,
    /// Lower bound on each normalization standard deviation, relative to
    /// the largest one.
    pub norm_floor: f64,
    /// Random initial-phase rotation of each training item.
    pub augment: bool,
    pub optimizer: RmsPropConfig,
    pub stft: StftConfig,
    /// Generator layers; `None` selects the default architecture.
    pub generator: Option<Vec<LayerSpec>>,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            feature_weights: None,
            batch_size: 10,
            epochs: 5,
            max_steps: None,
            gl_warm_iters: 5,
            seed: 0,
            d_steps_per_g_step: 1,
            norm_floor: 0.3,
            augment: true,
            optimizer: RmsPropConfig::default(),
            stft: StftConfig::default(),
            generator: None,
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a non-negative number");
        }
        if let Some(w) = &self.feature_weights {
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return bad("feature weights must be non-negative numbers");
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_steps_per_g_step == 0 {
            return bad("batch_size, epochs and d_steps_per_g_step must be positive");
        }
        if !(0.0..1.0).contains(&self.norm_floor) {
            return bad("norm_floor must lie in [0, 1)");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        self.optimizer.validate()?;
        self.stft.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn generator_specs(&self) -> Vec<LayerSpec> {
        self.generator
            .clone()
            .unwrap_or_else(|| default_generator_specs(self.stft.bins()))
    }

    /// Feature weights resolved against a discriminator with `count` features.
    pub fn resolved_weights(&self, count: usize) -> Result<Vec<f64>> {
        match &self.feature_weights {
            Some(w) if w.len() != count => Err(Error::InvalidConfig(format!(
                "{} feature weights for {count} discriminator features",
                w.len()
            ))),
            Some(w) => Ok(w.clone()),
            None => Ok((0..count).map(|l| if l == 0 { 0.0 } else { 1.0 }).collect()),
        }
    }
}

/// Runs `iters` Griffin-Lim steps from a seeded random phase and returns the
/// last projected spectrogram; with `iters = 0` the unprojected `a ⊙ φ⁰`.
pub fn warm_start<T: Real>(
    a: &MagnitudeSpectrogram<T>,
    seed: u64,
    iters: usize,
) -> Result<ComplexSpectrogram<T>> {
    warm_start_with(&GriffinLim::new(StftPlan::new(*a.config())?), a, seed, iters)
}

fn warm_start_with<T: Real>(
    gl: &GriffinLim<T>,
    a: &MagnitudeSpectrogram<T>,
    seed: u64,
    iters: usize,
) -> Result<ComplexSpectrogram<T>> {
    let init = PhaseInit::RandomUniform(seed);
    if iters == 0 {
        return combine(a, &initial_phase(a, &init)?);
    }
    let opts = GriffinLimOptions {
        max_iters: iters,
        stop_tol: 0.0,
        phase_init: init,
        record_objective: false,
    };
    Ok(gl.reconstruct(a, &opts)?.final_spectrogram)
}

fn stats_channels<T: Real>(stats: &NormStats) -> (Vec<T>, Vec<T>) {
    (stats.std_as(), stats.mean_as())
}

/// `ĉ = denormalize(G(normalize(warm)))`.
pub fn generator_forward<T: Real>(
    g: &GeneratorNet<T>,
    a: &MagnitudeSpectrogram<T>,
    warm: &ComplexSpectrogram<T>,
    stats: &NormStats,
) -> Result<ComplexSpectrogram<T>> {
    if a.values().dim() != warm.values().dim() || a.config() != warm.config() {
        return Err(Error::ShapeMismatch(
            "warm start and magnitude disagree in shape or config".into(),
        ));
    }
    if g.bins() != warm.bins() {
        return Err(Error::ShapeMismatch(format!(
            "generator built for {} bins, spectrogram has {}",
            g.bins(),
            warm.bins()
        )));
    }
    let mut tape = Tape::new();
    let params = g.network().bind(&mut tape, false);
    let input = tape.constant(normalize(warm, stats)?);
    let out = g.forward(&mut tape, &params, input)?;
    denormalize(tape.value(out)?, 0, stats, *warm.config())
}

/// Score and hidden features (as plain tensors) of one spectrogram.
pub fn discriminator_forward<T: Real>(
    d: &DiscriminatorNet<T>,
    c: &ComplexSpectrogram<T>,
    a: &MagnitudeSpectrogram<T>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let params = d.network().bind(&mut tape, false);
    let spectrum = tape.constant(to_channels(c));
    let cond = tape.constant(d.condition(a)?);
    let out = d.forward(&mut tape, &params, spectrum, cond)?;
    let score = tape.value(out.score)?.data()[0];
    let features = out
        .features
        .iter()
        .map(|&v| tape.value(v).cloned())
        .collect::<Result<_>>()?;
    Ok((score, features))
}

/// Generator, discriminator and normalization statistics, persisted together.
#[derive(Clone, Debug)]
pub struct ModelBundle<T: Real> {
    pub generator: GeneratorNet<T>,
    pub discriminator: DiscriminatorNet<T>,
    pub norm: NormStats,
    pub gl_warm_iters: usize,
}

/// Outputs of [`ModelBundle::reconstruct`].
#[derive(Clone, Debug)]
pub struct NeuralReconstruction<T> {
    pub warm: ComplexSpectrogram<T>,
    pub output: ComplexSpectrogram<T>,
    pub signal: TimeSignal<T>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    format: String,
    stft: StftConfig,
    bins: usize,
    generator: Vec<LayerSpec>,
    discriminator: DiscriminatorConfig,
    frames: usize,
    norm: NormStats,
    gl_warm_iters: usize,
}

const BUNDLE_FORMAT: &str = "specrecon-model";

impl<T: Real> ModelBundle<T> {
    /// Freshly initialized networks for spectrograms of `frames` frames,
    /// with identity normalization.
    pub fn initialize(cfg: &TrainConfig, frames: usize) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.stft.bins();
        Ok(Self {
            generator: match &cfg.generator {
                Some(specs) => GeneratorNet::new(specs.clone(), bins, cfg.seed)?,
                None => GeneratorNet::with_defaults(bins, cfg.seed)?,
            },
            discriminator: DiscriminatorNet::new(
                cfg.discriminator.clone(),
                cfg.stft,
                frames,
                cfg.seed.wrapping_add(1),
            )?,
            norm: NormStats::identity(bins),
            gl_warm_iters: cfg.gl_warm_iters,
        })
    }

    pub fn stft_config(&self) -> &StftConfig {
        self.discriminator.stft_config()
    }

    /// Warm start, generator, then inverse STFT.
    pub fn reconstruct(&self, a: &MagnitudeSpectrogram<T>, seed: u64) -> Result<NeuralReconstruction<T>> {
        if a.config() != self.stft_config() {
            return Err(Error::ShapeMismatch(
                "magnitude uses a different STFT config than the model".into(),
            ));
        }
        let warm = warm_start(a, seed, self.gl_warm_iters)?;
        let output = generator_forward(&self.generator, a, &warm, &self.norm)?;
        let signal = StftPlan::new(*a.config())?.istft(&output)?;
        Ok(NeuralReconstruction {
            warm,
            output,
            signal,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = BundleMeta {
            format: BUNDLE_FORMAT.to_string(),
            stft: *self.stft_config(),
            bins: self.generator.bins(),
            generator: self.generator.specs().to_vec(),
            discriminator: self.discriminator.config().clone(),
            frames: self.discriminator.frames(),
            norm: self.norm.clone(),
            gl_warm_iters: self.gl_warm_iters,
        };
        let mut tensors = Vec::new();
        for p in self.generator.network().params() {
            tensors.push((format!("generator/{}", p.name), &p.value));
        }
        for p in self.discriminator.network().params() {
            tensors.push((format!("discriminator/{}", p.name), &p.value));
        }
        bundle::encode(&meta, &tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut raw = bundle::decode(bytes, path)?;
        let meta: BundleMeta = serde_json::from_value(raw.metadata.clone())
            .map_err(|e| Error::malformed(path, format!("metadata: {e}")))?;
        if meta.format != BUNDLE_FORMAT {
            return Err(Error::malformed(path, format!("not a model bundle: {}", meta.format)));
        }
        let mut generator = GeneratorNet::new(meta.generator, meta.bins, 0)?;
        let mut discriminator = DiscriminatorNet::new(meta.discriminator, meta.stft, meta.frames, 0)?;
        let to_params = |v: Vec<(String, Tensor<T>)>| {
            v.into_iter()
                .map(|(name, value)| Param { name, value })
                .collect::<Vec<_>>()
        };
        generator
            .network_mut()
            .load_params(to_params(raw.take_prefixed("generator/")))?;
        discriminator
            .network_mut()
            .load_params(to_params(raw.take_prefixed("discriminator/")))?;
        Ok(Self {
            generator,
            discriminator,
            norm: meta.norm,
            gl_warm_iters: meta.gl_warm_iters,
        })
    }
}

/// Losses of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    /// Discriminator criterion before the last discriminator update.
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "I")]
    pub i: f64,
    /// `U + λ I`.
    #[serde(rename = "G_total")]
    pub g_total: f64,
}

/// CSV with header `step,V,U,I,G_total`; values use the shortest decimal
/// form that round-trips.
pub fn write_loss_log(out: impl std::io::Write, log: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r)
            .map_err(|e| Error::InvalidConfig(format!("loss log: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::InvalidConfig(format!("loss log: {e}")))
}

pub fn loss_log_csv(log: &[LossRecord]) -> Result<String> {
    let mut buf = Vec::new();
    if log.is_empty() {
        buf.extend_from_slice(b"step,V,U,I,G_total\n");
    } else {
        write_loss_log(&mut buf, log)?;
    }
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub bundle: ModelBundle<T>,
    pub log: Vec<LossRecord>,
}

struct Batch<T> {
    gen_input: Tensor<T>,
    real: Tensor<T>,
    condition: Tensor<T>,
}

/// Adversarial training of `bundle`'s networks on equal-length signals.
///
/// Normalization statistics are fitted on the un-augmented training spectra
/// and stored in the returned bundle.
pub fn train<T: Real>(
    dataset: &[TimeSignal<T>],
    generator: GeneratorNet<T>,
    discriminator: DiscriminatorNet<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let stft = *discriminator.stft_config();
    let plan = StftPlan::new(stft)?;
    let gl = GriffinLim::new(plan.clone());
    let clean: Vec<ComplexSpectrogram<T>> =
        dataset.iter().map(|x| plan.stft(x)).collect::<Result<_>>()?;
    if let Some(c) = clean.iter().find(|c| c.frames() != discriminator.frames()) {
        return Err(Error::ShapeMismatch(format!(
            "training item has {} frames, discriminator expects {}",
            c.frames(),
            discriminator.frames()
        )));
    }
    if generator.bins() != stft.bins() {
        return Err(Error::ShapeMismatch("generator and discriminator disagree on bins".into()));
    }
    let norm = NormStats::fit_with_floor(&clean, cfg.norm_floor)?;
    let weights = cfg.resolved_weights(discriminator.feature_count())?;
    let (scale, shift) = stats_channels::<T>(&norm);

    let shapes = |params: &[Param<T>]| params.iter().map(|p| p.value.shape()).collect::<Vec<_>>();
    let mut opt_g = RmsProp::new(cfg.optimizer, &shapes(generator.network().params()))?;
    let mut opt_d = RmsProp::new(cfg.optimizer, &shapes(discriminator.network().params()))?;
    let mut generator = generator;
    let mut discriminator = discriminator;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut log = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step = log.len();
            if step >= max_steps {
                break 'epochs;
            }
            let mut items = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let aug_seed: u64 = rng.random();
                let warm_seed: u64 = rng.random();
                items.push((idx, aug_seed, warm_seed));
            }
            let batch = prepare_batch(
                &items, dataset, &clean, &plan, &gl, &discriminator, &norm, cfg,
            )?;
            let record = train_step(
                step,
                &batch,
                &mut generator,
                &mut discriminator,
                &mut opt_g,
                &mut opt_d,
                &weights,
                (&scale, &shift),
                cfg,
            )
            .map_err(|e| match e {
                Error::NonFiniteActivation(_) => Error::NonFiniteLoss { step },
                other => other,
            })?;
            log::debug!(
                "epoch {epoch} step {step}: V={:.5} U={:.5} I={:.5}",
                record.v,
                record.u,
                record.i
            );
            log.push(record);
        }
    }
    log::info!("training finished after {} steps", log.len());
    Ok(TrainOutcome {
        bundle: ModelBundle {
            generator,
            discriminator,
            norm,
            gl_warm_iters: cfg.gl_warm_iters,
        },
        log,
    })
}

#[allow(clippy::too_many_arguments)]
fn prepare_batch<T: Real>(
    items: &[(usize, u64, u64)],
    dataset: &[TimeSignal<T>],
    clean: &[ComplexSpectrogram<T>],
    plan: &StftPlan<T>,
    gl: &GriffinLim<T>,
    discriminator: &DiscriminatorNet<T>,
    norm: &NormStats,
    cfg: &TrainConfig,
) -> Result<Batch<T>> {
    let mut gen_input = Vec::with_capacity(items.len());
    let mut real = Vec::with_capacity(items.len());
    let mut condition = Vec::with_capacity(items.len());
    for &(idx, aug_seed, warm_seed) in items {
        let c = if cfg.augment {
            plan.stft(&augment_phase(&dataset[idx], aug_seed))?
        } else {
            clean[idx].clone()
        };
        let a = magnitude(&c);
        let warm = warm_start_with(gl, &a, warm_seed, cfg.gl_warm_iters)?;
        gen_input.push(normalize(&warm, norm)?);
        real.push(to_channels(&c));
        condition.push(discriminator.condition(&a)?);
    }
    Ok(Batch {
        gen_input: Tensor::stack(&gen_input)?,
        real: Tensor::stack(&real)?,
        condition: Tensor::stack(&condition)?,
    })
}

fn finite_value<T: Real>(tape: &Tape<T>, v: Var, step: usize) -> Result<f64> {
    let x = tape.value(v)?.data()[0].as_f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss { step })
    }
}

fn gradients<T: Real>(tape: &Tape<T>, loss: Var, params: &[Var]) -> Result<Vec<Tensor<T>>> {
    let grads = tape.backward(loss)?;
    params.iter().map(|&p| grads.wrt(p)).collect()
}

#[allow(clippy::too_many_arguments)]
fn train_step<T: Real>(
    step: usize,
    batch: &Batch<T>,
    generator: &mut GeneratorNet<T>,
    discriminator: &mut DiscriminatorNet<T>,
    opt_g: &mut RmsProp<T>,
    opt_d: &mut RmsProp<T>,
    weights: &[f64],
    (scale, shift): (&[T], &[T]),
    cfg: &TrainConfig,
) -> Result<LossRecord> {
    // Generated spectra for the discriminator updates, without a graph
    // into the generator.
    let fake = {
        let mut tape = Tape::new();
        let gp = generator.network().bind(&mut tape, false);
        let input = tape.constant(batch.gen_input.clone());
        let y = generator.forward(&mut tape, &gp, input)?;
        let c_hat = tape.channel_affine(y, scale, shift)?;
        tape.value(c_hat)?.clone()
    };

    let mut v = 0.0;
    for _ in 0..cfg.d_steps_per_g_step {
        let mut tape = Tape::new();
        let dp = discriminator.network().bind(&mut tape, true);
        let real = tape.constant(batch.real.clone());
        let fake = tape.constant(fake.clone());
        let cond = tape.constant(batch.condition.clone());
        let s_real = discriminator.forward(&mut tape, &dp, real, cond)?.score;
        let s_fake = discriminator.forward(&mut tape, &dp, fake, cond)?.score;
        let loss = loss_v_on_tape(&mut tape, s_real, s_fake)?;
        v = finite_value(&tape, loss, step)?;
        let grads = gradients(&tape, loss, &dp)?;
        opt_d.step(
            discriminator.network_mut().params_mut().iter_mut().map(|p| &mut p.value),
            &grads,
        )?;
    }

    let targets: Vec<Tensor<T>> = {
        let mut tape = Tape::new();
        let dp = discriminator.network().bind(&mut tape, false);
        let real = tape.constant(batch.real.clone());
        let cond = tape.constant(batch.condition.clone());
        let out = discriminator.forward(&mut tape, &dp, real, cond)?;
        out.features
            .iter()
            .map(|&f| tape.value(f).cloned())
            .collect::<Result<_>>()?
    };

    let mut tape = Tape::new();
    let gp = generator.network().bind(&mut tape, true);
    let dp = discriminator.network().bind(&mut tape, false);
    let input = tape.constant(batch.gen_input.clone());
    let y = generator.forward(&mut tape, &gp, input)?;
    let c_hat = tape.channel_affine(y, scale, shift)?;
    let cond = tape.constant(batch.condition.clone());
    let out = discriminator.forward(&mut tape, &dp, c_hat, cond)?;
    let u_var = loss_u_on_tape(&mut tape, out.score)?;
    let i_var = loss_i_on_tape(&mut tape, &targets, &out.features, weights)?;
    let u = finite_value(&tape, u_var, step)?;
    let (total, i) = match i_var {
        Some(i_var) => {
            let i = finite_value(&tape, i_var, step)?;
            let weighted = tape.scale(i_var, T::of(cfg.lambda))?;
            (tape.add(u_var, weighted)?, i)
        }
        None => (u_var, 0.0),
    };
    let g_total = finite_value(&tape, total, step)?;
    let grads = gradients(&tape, total, &gp)?;
    opt_g.step(
        generator.network_mut().params_mut().iter_mut().map(|p| &mut p.value),
        &grads,
    )?;
    Ok(LossRecord {
        step,
        v,
        u,
        i,
        g_total,
    })
}

/// Mean spectral convergence of the warm starts and of the generator outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub warm: f64,
    pub output: f64,
}

impl EvalSummary {
    /// `1 − output / warm`.
    pub fn relative_improvement(&self) -> f64 {
        1.0 - self.output / self.warm
    }
}

/// Reconstructs every signal from its own magnitude (warm-start seed
/// `seed + index`) and averages spectral convergence.
pub fn evaluate<T: Real>(bundle: &ModelBundle<T>, signals: &[TimeSignal<T>], seed: u64) -> Result<EvalSummary> {
    if signals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let plan = StftPlan::new(*bundle.stft_config())?;
    let mut warm = 0.0;
    let mut output = 0.0;
    for (i, x) in signals.iter().enumerate() {
        let a = magnitude(&plan.stft(x)?);
        let r = bundle.reconstruct(&a, seed.wrapping_add(i as u64))?;
        warm += spectral_convergence_with(&plan, &a, &plan.istft(&r.warm)?)?;
        output += spectral_convergence_with(&plan, &a, &r.signal)?;
    }
    let n = signals.len() as f64;
    Ok(EvalSummary {
        warm: warm / n,
        output: output / n,
    })
}
