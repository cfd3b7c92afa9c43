//! Generator and discriminator networks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    ExternalInput, LayerKind, LayerSpec, Network, Tape, Tensor, Var, INPUT,
};
use crate::scalar::Real;
use crate::spectral::{MagnitudeSpectrogram, StftConfig, StftPlan};

/// Name of the external input carrying the conditioning magnitude.
pub const CONDITION: &str = "condition";

/// Default generator: a 9-tap input convolution, three residual blocks of
/// 3-tap convolutions with PReLU, and a 9-tap output convolution. The output
/// is added to the network input so the generator starts close to passing
/// its warm start through.
pub fn default_generator_specs(bins: usize) -> Vec<LayerSpec> {
    let hidden = 64;
    let mut specs = vec![
        LayerSpec::conv("in_conv", 9, 1, hidden),
        LayerSpec::new("in_act", LayerKind::Prelu { per_channel: false }),
    ];
    let mut previous = "in_act".to_string();
    for i in 1..=3 {
        let block = format!("res{i}");
        specs.push(LayerSpec::conv(format!("{block}_conv1"), 3, 1, hidden));
        specs.push(LayerSpec::new(
            format!("{block}_act"),
            LayerKind::Prelu { per_channel: false },
        ));
        specs.push(LayerSpec::conv(format!("{block}_conv2"), 3, 1, hidden));
        specs.push(LayerSpec::new(
            format!("{block}_add"),
            LayerKind::ResidualAdd { source: previous },
        ));
        previous = format!("{block}_add");
    }
    specs.push(LayerSpec::conv("out_conv", 9, 1, 2 * bins));
    specs.push(LayerSpec::new(
        "out_skip",
        LayerKind::ResidualAdd {
            source: INPUT.to_string(),
        },
    ));
    specs
}

/// Fully convolutional mapping from `2F'` normalized channels to `2F'`
/// normalized channels over any number of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet<T> {
    bins: usize,
    net: Network<T>,
}

impl<T: Real> GeneratorNet<T> {
    pub fn new(specs: Vec<LayerSpec>, bins: usize, seed: u64) -> Result<Self> {
        let channels = 2 * bins;
        if let Some(spec) = specs
            .iter()
            .find(|s| matches!(s.kind, LayerKind::FullyConnected { .. }))
        {
            return Err(Error::InvalidConfig(format!(
                "generator layer '{}' is fully connected; the generator must accept any length",
                spec.name
            )));
        }
        // Probe two lengths so that any length-changing layer is caught.
        for probe in [31, 64] {
            let net = Network::<T>::new(specs.clone(), (channels, probe), Vec::new(), seed)?;
            if net.output_shape() != (channels, probe) {
                return Err(Error::InvalidConfig(format!(
                    "generator maps ({channels}, {probe}) to {:?}; it must preserve both",
                    net.output_shape()
                )));
            }
        }
        Ok(Self {
            bins,
            net: Network::new(specs, (channels, 31), Vec::new(), seed)?,
        })
    }

    /// The default architecture with its output convolution zeroed, so the
    /// untrained generator returns its input unchanged.
    pub fn with_defaults(bins: usize, seed: u64) -> Result<Self> {
        let mut g = Self::new(default_generator_specs(bins), bins, seed)?;
        if let Some(w) = g.net.param_mut("out_conv.weight") {
            w.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(g)
    }

    /// A single 1x1 convolution with identity weights.
    pub fn identity(bins: usize) -> Self {
        let channels = 2 * bins;
        let mut g = Self::new(vec![LayerSpec::conv("identity", 1, 1, channels)], bins, 0)
            .expect("identity generator is valid");
        let w = g.net.param_mut("identity.weight").expect("weight exists");
        *w = Tensor::from_fn([channels, channels, 1], |o, i, _| {
            if o == i {
                T::one()
            } else {
                T::zero()
            }
        });
        g
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn specs(&self) -> &[LayerSpec] {
        self.net.specs()
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    /// Forward pass in the normalized domain.
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], input: Var) -> Result<Var> {
        Ok(self.net.forward(tape, input, params, &[])?.output())
    }
}

/// Architecture of the discriminator behind its fixed synthesis front end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Layers applied to the synthesized waveform. A `Concat` layer with
    /// source `"condition"` receives the pooled magnitude.
    pub layers: Vec<LayerSpec>,
    /// Number of frequency bands the conditioning magnitude is pooled into.
    pub cond_bands: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        let conv = |name: &str, c| LayerSpec::conv(name, 31, 4, c);
        let leaky = |name: &str| LayerSpec::new(name, LayerKind::LeakyRelu { slope: 0.2 });
        Self {
            layers: vec![
                conv("d1", 16),
                leaky("d1_act"),
                conv("d2", 32),
                leaky("d2_act"),
                LayerSpec::new(
                    "cond",
                    LayerKind::Concat {
                        source: CONDITION.to_string(),
                    },
                ),
                conv("d3", 64),
                leaky("d3_act"),
                conv("d4", 64),
                leaky("d4_act"),
                LayerSpec::new("fc1", LayerKind::FullyConnected { out_units: 256 }),
                leaky("fc1_act"),
                LayerSpec::new("fc2", LayerKind::FullyConnected { out_units: 1 }),
            ],
            cond_bands: 32,
        }
    }
}

/// Discriminator for spectrograms with a fixed number of frames.
///
/// The front block synthesizes the waveform with the least-squares inverse
/// STFT and drops `win_len - hop` samples at each end, where the squared
/// window sum is small and synthesis of an inconsistent spectrogram is badly
/// conditioned.
#[derive(Clone)]
pub struct DiscriminatorNet<T: Real> {
    config: DiscriminatorConfig,
    frames: usize,
    plan: Arc<StftPlan<T>>,
    net: Network<T>,
}

impl<T: Real> std::fmt::Debug for DiscriminatorNet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscriminatorNet")
            .field("config", &self.config)
            .field("frames", &self.frames)
            .field("stft", self.plan.config())
            .finish_non_exhaustive()
    }
}

/// Score and hidden features of one discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    /// `(B, 1, 1)` scores.
    pub score: Var,
    /// Feature 0 is the cropped waveform; feature `l` the output of layer `l`.
    pub features: Vec<Var>,
}

impl<T: Real> DiscriminatorNet<T> {
    pub fn new(config: DiscriminatorConfig, stft: StftConfig, frames: usize, seed: u64) -> Result<Self> {
        if config.cond_bands == 0 || config.cond_bands > stft.bins() {
            return Err(Error::InvalidConfig(format!(
                "cond_bands must lie in 1..={}",
                stft.bins()
            )));
        }
        let plan = Arc::new(StftPlan::new(stft)?);
        let len = Self::waveform_len(&stft, frames)?;
        let externals = vec![ExternalInput {
            name: CONDITION.to_string(),
            channels: config.cond_bands,
        }];
        let net = Network::new(config.layers.clone(), (1, len), externals, seed)?;
        if net.output_shape() != (1, 1) {
            return Err(Error::InvalidConfig(format!(
                "discriminator must end in a single unit, ends in {:?}",
                net.output_shape()
            )));
        }
        if net.external_length(CONDITION).is_none() {
            return Err(Error::InvalidConfig(format!(
                "discriminator has no Concat layer fed by '{CONDITION}'"
            )));
        }
        Ok(Self {
            config,
            frames,
            plan,
            net,
        })
    }

    fn waveform_len(stft: &StftConfig, frames: usize) -> Result<usize> {
        let full = stft.signal_len(frames);
        let edge = stft.edge_len();
        if frames == 0 || full <= 2 * edge {
            return Err(Error::InvalidConfig(format!(
                "{frames} frames leave no interior samples for the discriminator"
            )));
        }
        Ok(full - 2 * edge)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn stft_config(&self) -> &StftConfig {
        self.plan.config()
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    /// Number of hidden features, including the waveform at index 0.
    pub fn feature_count(&self) -> usize {
        1 + self.net.specs().len()
    }

    /// Length of the conditioning input along time.
    pub fn condition_len(&self) -> usize {
        self.net
            .external_length(CONDITION)
            .expect("checked at construction")
    }

    /// Pools `a` into `cond_bands` frequency bands and `condition_len()`
    /// time steps, compressed with `log1p`. Output is `(1, bands, len)`.
    pub fn condition(&self, a: &MagnitudeSpectrogram<T>) -> Result<Tensor<T>> {
        if a.frames() != self.frames || a.config() != self.plan.config() {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} frames of its own STFT config, got {}",
                self.frames,
                a.frames()
            )));
        }
        Ok(pool_condition(a, self.config.cond_bands, self.condition_len()))
    }

    /// Runs the front block and the layers on a raw `(B, 2F', N)`
    /// spectrogram tensor with its `(B, bands, len)` condition.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        spectrum: Var,
        condition: Var,
    ) -> Result<DiscriminatorOutput> {
        let frames = tape.value(spectrum)?.length();
        if frames != self.frames {
            return Err(Error::ShapeMismatch(format!(
                "discriminator built for {} frames, got {frames}",
                self.frames
            )));
        }
        let wave = tape.istft(spectrum, Arc::clone(&self.plan))?;
        let edge = self.plan.config().edge_len();
        let len = Self::waveform_len(self.plan.config(), frames)?;
        let wave = tape.crop(wave, edge, len)?;
        let acts = self
            .net
            .forward(tape, wave, params, &[(CONDITION, condition)])?;
        let mut features = Vec::with_capacity(acts.layers.len() + 1);
        features.push(wave);
        features.extend(acts.layers.iter().copied());
        Ok(DiscriminatorOutput {
            score: acts.output(),
            features,
        })
    }
}

/// Band- and interval-mean pooling of a magnitude spectrogram.
///
/// Frequency bins are split into `bands` contiguous groups; output step `i`
/// averages frames `[i N / len, (i + 1) N / len)` or, when that interval is
/// empty, repeats frame `i N / len`.
pub fn pool_condition<T: Real>(a: &MagnitudeSpectrogram<T>, bands: usize, len: usize) -> Tensor<T> {
    let bins = a.bins();
    let frames = a.frames();
    let v = a.values();
    let banded: Vec<Vec<f64>> = (0..bands)
        .map(|b| {
            let lo = b * bins / bands;
            let hi = ((b + 1) * bins / bands).max(lo + 1);
            (0..frames)
                .map(|n| (lo..hi).map(|k| v[[k, n]].as_f64()).sum::<f64>() / (hi - lo) as f64)
                .collect()
        })
        .collect();
    Tensor::from_fn([1, bands, len], |_, b, i| {
        let lo = i * frames / len;
        let hi = ((i + 1) * frames / len).max(lo + 1);
        let mean = banded[b][lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        T::of(mean.ln_1p())
    })
}
