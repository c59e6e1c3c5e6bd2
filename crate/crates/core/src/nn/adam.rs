use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{NnError, OptimizerState, ParameterSet};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate at `epoch` under half-cosine decay from `base` to zero.
pub fn cosine_lr(base: f32, epoch: usize, total_epochs: usize) -> f32 {
    if total_epochs == 0 {
        return base;
    }
    let progress = epoch.min(total_epochs) as f64 / total_epochs as f64;
    (base as f64 * 0.5 * (1.0 + math::cos(core::f64::consts::PI * progress))) as f32
}

/// Bias-corrected Adam. Moment buffers follow the parameter set's order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f32 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Applies one update from every parameter's pending gradient, then
    /// clears the gradients. Fails without touching anything if a gradient
    /// is missing.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<(), NnError> {
        if let Some(p) = params.iter().find(|p| p.grad().is_none()) {
            return Err(NnError::MissingGradient(p.name().into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - math::pow(beta1 as f64, self.step as f64);
        let bc2 = 1.0 - math::pow(beta2 as f64, self.step as f64);
        for (i, p) in params.entries_mut().iter_mut().enumerate() {
            let g = p.take_grad().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let value = p.value_mut();
            let mut data = core::mem::replace(value, Tensor::scalar(0.0)).into_data();
            for (j, (&gj, x)) in g.data().iter().zip(data.iter_mut()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] as f64 / bc1;
                let v_hat = v[j] as f64 / bc2;
                *x -= (lr as f64 * m_hat / (math::sqrt(v_hat) + eps as f64)) as f32;
            }
            *value = Tensor::from_parts(g.shape().to_vec(), data);
        }
        Ok(())
    }

    /// Snapshot for checkpointing.
    pub fn state(&self, params: &ParameterSet, epoch: u32) -> OptimizerState {
        let mut moments = Vec::with_capacity(2 * params.len());
        for (i, p) in params.iter().enumerate() {
            let shape = p.value().shape().to_vec();
            moments.push((alloc::format!("m/{}", p.name()), Tensor::from_parts(shape.clone(), self.m[i].clone())));
            moments.push((alloc::format!("v/{}", p.name()), Tensor::from_parts(shape, self.v[i].clone())));
        }
        OptimizerState {
            step: self.step,
            epoch,
            config: self.config,
            moments,
        }
    }

    /// Restores from a snapshot; every parameter needs both moments with the
    /// parameter's shape.
    pub fn from_state(state: &OptimizerState, params: &ParameterSet) -> Result<Self, NnError> {
        let mut adam = Self::new(state.config, params);
        adam.step = state.step;
        for (i, p) in params.iter().enumerate() {
            for (prefix, buf) in [("m/", &mut adam.m[i]), ("v/", &mut adam.v[i])] {
                let key = alloc::format!("{prefix}{}", p.name());
                let (_, t) = state
                    .moments
                    .iter()
                    .find(|(n, _)| *n == key)
                    .ok_or_else(|| NnError::MissingParameter(key.clone()))?;
                if t.shape() != p.value().shape() {
                    return Err(NnError::ParameterShape {
                        name: key,
                        expected: p.value().shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                buf.copy_from_slice(t.data());
            }
        }
        Ok(adam)
    }
}
