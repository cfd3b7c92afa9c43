//! Minimal reverse-mode differentiation engine, layer kernels and RMSprop.

pub mod bundle;
mod layers;
mod optim;
mod tape;
mod tensor;

pub use layers::{Activations, ExternalInput, LayerKind, LayerSpec, Network, Padding, Param, INPUT};
pub use optim::{RmsProp, RmsPropConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
