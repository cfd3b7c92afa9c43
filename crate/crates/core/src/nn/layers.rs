//! Layer specifications and a sequential network with named skip inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Name under which a network's primary input can be referenced by
/// `ResidualAdd` and `Concat` layers.
pub const INPUT: &str = "input";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// `(kernel - 1) / 2` on both sides.
    #[default]
    Same,
    Valid,
    Explicit(usize),
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
            Padding::Explicit(p) => p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d {
        kernel: usize,
        stride: usize,
        out_channels: usize,
        #[serde(default)]
        padding: Padding,
    },
    Prelu {
        per_channel: bool,
    },
    LeakyRelu {
        slope: f64,
    },
    FullyConnected {
        out_units: usize,
    },
    /// Adds the output of an earlier layer (or a named input).
    ResidualAdd {
        source: String,
    },
    /// Appends the channels of an earlier layer (or a named input).
    Concat {
        source: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn conv(name: impl Into<String>, kernel: usize, stride: usize, out_channels: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv1d {
                kernel,
                stride,
                out_channels,
                padding: Padding::Same,
            },
        )
    }
}

/// A trainable tensor with a stable name.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// An extra named input consumed by a `Concat` or `ResidualAdd` layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalInput {
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Planned {
    params: Vec<usize>,
    out_shape: (usize, usize),
}

/// Sequential stack of [`LayerSpec`]s with shape inference and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    specs: Vec<LayerSpec>,
    input_shape: (usize, usize),
    externals: Vec<ExternalInput>,
    params: Vec<Param<T>>,
    plan: Vec<Planned>,
}

/// Per-layer outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub input: Var,
    pub layers: Vec<Var>,
}

impl Activations {
    pub fn output(&self) -> Var {
        *self.layers.last().unwrap_or(&self.input)
    }
}

impl<T: Real> Network<T> {
    /// Builds the network for inputs of `input_shape = (channels, length)`
    /// and draws weights from a seeded generator.
    ///
    /// Convolution and dense weights are uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases start at zero and PReLU slopes
    /// at 0.25.
    pub fn new(
        specs: Vec<LayerSpec>,
        input_shape: (usize, usize),
        externals: Vec<ExternalInput>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self {
            specs: Vec::new(),
            input_shape,
            externals,
            params: Vec::new(),
            plan: Vec::new(),
        };
        for spec in specs {
            net.push_layer(spec, &mut rng)?;
        }
        Ok(net)
    }

    fn shape_of(&self, source: &str) -> Result<(usize, usize)> {
        if source == INPUT {
            return Ok(self.input_shape);
        }
        if let Some(i) = self.specs.iter().position(|s| s.name == source) {
            return Ok(self.plan[i].out_shape);
        }
        Err(Error::InvalidConfig(format!(
            "layer source '{source}' does not name an earlier layer"
        )))
    }

    fn current_shape(&self) -> (usize, usize) {
        self.plan.last().map_or(self.input_shape, |p| p.out_shape)
    }

    fn push_layer(&mut self, spec: LayerSpec, rng: &mut ChaCha8Rng) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("layer '{}': {msg}", spec.name)));
        if spec.name.is_empty()
            || spec.name == INPUT
            || self.specs.iter().any(|s| s.name == spec.name)
            || self.externals.iter().any(|e| e.name == spec.name)
        {
            return bad("name must be unique and not reserved".into());
        }
        let (ch, len) = self.current_shape();
        let mut params = Vec::new();
        let out_shape = match &spec.kind {
            &LayerKind::Conv1d {
                kernel,
                stride,
                out_channels,
                padding,
            } => {
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return bad("kernel, stride and channels must be positive".into());
                }
                let pad = padding.amount(kernel);
                if len + 2 * pad < kernel {
                    return bad(format!("kernel {kernel} exceeds padded length {}", len + 2 * pad));
                }
                let limit = (6.0 / ((ch + out_channels) * kernel) as f64).sqrt();
                params.push(self.add_param(
                    format!("{}.weight", spec.name),
                    glorot([out_channels, ch, kernel], limit, rng),
                ));
                params.push(self.add_param(
                    format!("{}.bias", spec.name),
                    Tensor::zeros([1, out_channels, 1]),
                ));
                (out_channels, (len + 2 * pad - kernel) / stride + 1)
            }
            &LayerKind::Prelu { per_channel } => {
                let shape = if per_channel { [1, ch, 1] } else { [1, 1, 1] };
                params.push(self.add_param(
                    format!("{}.slope", spec.name),
                    Tensor::full(shape, T::of(0.25)),
                ));
                (ch, len)
            }
            &LayerKind::LeakyRelu { slope } => {
                if !(slope > 0.0 && slope < 1.0) {
                    return bad(format!("slope {slope} must lie in (0, 1)"));
                }
                (ch, len)
            }
            &LayerKind::FullyConnected { out_units } => {
                if out_units == 0 {
                    return bad("out_units must be positive".into());
                }
                let input = ch * len;
                let limit = (6.0 / (input + out_units) as f64).sqrt();
                params.push(self.add_param(
                    format!("{}.weight", spec.name),
                    glorot([out_units, input, 1], limit, rng),
                ));
                params.push(self.add_param(
                    format!("{}.bias", spec.name),
                    Tensor::zeros([1, out_units, 1]),
                ));
                (out_units, 1)
            }
            LayerKind::ResidualAdd { source } => {
                let other = match self.externals.iter().find(|e| &e.name == source) {
                    Some(e) => (e.channels, len),
                    None => self.shape_of(source)?,
                };
                if other != (ch, len) {
                    return bad(format!("cannot add {other:?} to {:?}", (ch, len)));
                }
                (ch, len)
            }
            LayerKind::Concat { source } => {
                let other = match self.externals.iter().find(|e| &e.name == source) {
                    Some(e) => (e.channels, len),
                    None => self.shape_of(source)?,
                };
                if other.1 != len {
                    return bad(format!("cannot concat length {} with {len}", other.1));
                }
                (ch + other.0, len)
            }
        };
        self.specs.push(spec);
        self.plan.push(Planned { params, out_shape });
        Ok(())
    }

    fn add_param(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn externals(&self) -> &[ExternalInput] {
        &self.externals
    }

    /// Output `(channels, length)` of each layer for the nominal input.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.plan.iter().map(|p| p.out_shape).collect()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.current_shape()
    }

    /// Length at which a named external input is consumed.
    pub fn external_length(&self, name: &str) -> Option<usize> {
        self.specs.iter().enumerate().find_map(|(i, s)| match &s.kind {
            LayerKind::Concat { source } | LayerKind::ResidualAdd { source } if source == name => {
                Some(if i == 0 {
                    self.input_shape.1
                } else {
                    self.plan[i - 1].out_shape.1
                })
            }
            _ => None,
        })
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, values: Vec<Param<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, network has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(values) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value;
        }
        Ok(())
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    /// Runs the layers on `input`. `params` must come from [`Self::bind`] on
    /// the same tape; `externals` supplies the named extra inputs.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
        externals: &[(&str, Var)],
    ) -> Result<Activations> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter handles for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let in_ch = tape.value(input)?.channels();
        if in_ch != self.input_shape.0 {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {in_ch}",
                self.input_shape.0
            )));
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(self.specs.len());
        let mut current = input;
        for (i, (spec, planned)) in self.specs.iter().zip(&self.plan).enumerate() {
            let p = |j: usize| params[planned.params[j]];
            let lookup = |source: &str, outputs: &[Var]| -> Result<Var> {
                if source == INPUT {
                    return Ok(input);
                }
                if let Some(&(_, v)) = externals.iter().find(|(n, _)| *n == source) {
                    return Ok(v);
                }
                self.specs[..i]
                    .iter()
                    .position(|s| s.name == source)
                    .map(|j| outputs[j])
                    .ok_or_else(|| Error::InvalidConfig(format!("missing input '{source}'")))
            };
            current = match &spec.kind {
                &LayerKind::Conv1d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => tape.conv1d(current, p(0), p(1), stride, padding.amount(kernel))?,
                LayerKind::Prelu { .. } => tape.prelu(current, p(0))?,
                &LayerKind::LeakyRelu { slope } => tape.leaky_relu(current, T::of(slope))?,
                LayerKind::FullyConnected { .. } => tape.linear(current, p(0), p(1))?,
                LayerKind::ResidualAdd { source } => {
                    let other = lookup(source, &outputs)?;
                    tape.add(current, other)?
                }
                LayerKind::Concat { source } => {
                    let other = lookup(source, &outputs)?;
                    tape.concat(current, other)?
                }
            };
            outputs.push(current);
        }
        Ok(Activations {
            input,
            layers: outputs,
        })
    }
}

fn glorot<T: Real>(shape: [usize; 3], limit: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_, _, _| T::of(rng.random_range(-limit..limit)))
}
