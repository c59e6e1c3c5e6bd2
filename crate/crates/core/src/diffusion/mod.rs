//! Conditional denoising diffusion: training on (clean, degraded) pairs and
//! enhancement by partial noising followed by conditioned reverse sampling.

mod sampler;
mod train;

pub use sampler::{
    ddim_grid, enhance, refine, reverse_step_ddim, reverse_step_ddpm, run_reverse, SamplerConfig, SamplerKind,
    StepOptions, COARSE_TO_FINE_FRACTION, ONE_STEP_FRACTION,
};
pub use train::{EpochReport, Pairing, StepRecord, TrainConfig, Trainer, TrainingExample};

use crate::degrade::DegradeError;
use crate::nn::{NnError, NoiseEstimator};
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error("non-finite value in `{op}` at epoch {epoch}, step {step}")]
    NonFinite { op: &'static str, epoch: usize, step: u64 },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("step {t_prev} is not before step {t}")]
    StepOrder { t: usize, t_prev: usize },
    #[error("noise depth {depth} exceeds the schedule's {steps} steps")]
    DepthOutOfRange { depth: usize, steps: usize },
}

/// Anything that estimates the noise in `noisy` given steps and condition.
pub trait NoisePredictor {
    fn predict_noise(&self, noisy: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor, DiffusionError>;
}

impl NoisePredictor for NoiseEstimator {
    fn predict_noise(&self, noisy: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor, DiffusionError> {
        Ok(self.predict(noisy, t, cond)?)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, noisy: &Tensor, _t: &[usize], _cond: &Tensor) -> Result<Tensor, DiffusionError> {
        Ok(Tensor::zeros(noisy.shape()))
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, noisy: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor, DiffusionError> {
        (**self).predict_noise(noisy, t, cond)
    }
}

/// Mean squared error between `eps` and the prediction on
/// `q_sample(target, t, eps)` conditioned on `cond`, without any update.
pub fn noise_prediction_loss<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    target: &Tensor,
    cond: &Tensor,
    t: &[usize],
    eps: &Tensor,
) -> Result<f64, DiffusionError> {
    let noisy = schedule.q_sample(target, t, eps)?;
    let pred = predictor.predict_noise(&noisy, t, cond)?;
    if pred.shape() != eps.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "noise_prediction_loss",
            lhs: pred.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        }
        .into());
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&p, &e)| {
            let d = p as f64 - e as f64;
            d * d
        })
        .sum();
    Ok(sum / eps.numel() as f64)
}
