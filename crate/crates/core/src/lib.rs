//! Phase reconstruction from magnitude spectrograms.
//!
//! The crate provides a least-squares STFT with its consistency projection,
//! Griffin-Lim reconstruction, a small reverse-mode autodiff engine with 1-D
//! convolutional layers, and adversarial training of a spectrogram-refining
//! generator. All numeric code is generic over [`scalar::Real`] (`f32` or
//! `f64`); the aliases below fix the scalar for common use.

pub mod audio;
pub mod bench;
pub mod error;
pub mod gan;
pub mod griffinlim;
pub mod magfile;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod spectral;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};

pub type TimeSignalF32 = spectral::TimeSignal<f32>;
pub type TimeSignalF64 = spectral::TimeSignal<f64>;
pub type ComplexSpectrogramF32 = spectral::ComplexSpectrogram<f32>;
pub type ComplexSpectrogramF64 = spectral::ComplexSpectrogram<f64>;
pub type MagnitudeSpectrogramF32 = spectral::MagnitudeSpectrogram<f32>;
pub type MagnitudeSpectrogramF64 = spectral::MagnitudeSpectrogram<f64>;
pub type PhaseSpectrogramF32 = spectral::PhaseSpectrogram<f32>;
pub type PhaseSpectrogramF64 = spectral::PhaseSpectrogram<f64>;
pub type StftPlanF32 = spectral::StftPlan<f32>;
pub type StftPlanF64 = spectral::StftPlan<f64>;
pub type GriffinLimF32 = griffinlim::GriffinLim<f32>;
pub type GriffinLimF64 = griffinlim::GriffinLim<f64>;
pub type TensorF32 = nn::Tensor<f32>;
pub type TensorF64 = nn::Tensor<f64>;
pub type ModelBundleF32 = gan::ModelBundle<f32>;
pub type ModelBundleF64 = gan::ModelBundle<f64>;
