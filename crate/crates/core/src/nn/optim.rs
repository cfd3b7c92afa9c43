use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    /// Decay of the squared-gradient accumulator.
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            alpha: 0.5,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig("epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

/// RMSprop state: `m <- α m + (1 - α) g²`, `θ <- θ - lr g / sqrt(m + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    accumulators: Vec<Vec<T>>,
}

impl<T: Real> RmsProp<T> {
    /// Zero accumulators mirroring `shapes`.
    pub fn new(config: RmsPropConfig, shapes: &[[usize; 3]]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            accumulators: shapes
                .iter()
                .map(|s| vec![T::zero(); s.iter().product()])
                .collect(),
        })
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.accumulators
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
    ) -> Result<()> {
        let alpha = T::of(self.config.alpha);
        let keep = T::one() - alpha;
        let lr = T::of(self.config.learning_rate);
        let eps = T::of(self.config.epsilon);
        let mut count = 0;
        for (i, param) in params.into_iter().enumerate() {
            let (Some(acc), Some(grad)) = (self.accumulators.get_mut(i), grads.get(i)) else {
                return Err(Error::ShapeMismatch(
                    "more parameters than optimizer slots or gradients".into(),
                ));
            };
            if param.shape() != grad.shape() || acc.len() != param.len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {:?} vs gradient {:?}",
                    param.shape(),
                    grad.shape()
                )));
            }
            for ((theta, m), &g) in param.data_mut().iter_mut().zip(acc.iter_mut()).zip(grad.data()) {
                *m = alpha * *m + keep * g * g;
                *theta = *theta - lr * g / (*m + eps).sqrt();
            }
            count += 1;
        }
        if count != self.accumulators.len() || count != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{count} parameters for {} optimizer slots",
                self.accumulators.len()
            )));
        }
        Ok(())
    }
}
