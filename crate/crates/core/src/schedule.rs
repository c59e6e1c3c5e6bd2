//! Variance schedules and the closed-form forward (noising) process.
//!
//! Tables are indexed by step `t` in `0..=T`. Index 0 is the clean state:
//! `beta[0] = 0`, `alpha[0] = 1`. Here `alpha` is the cumulative product
//! `alpha[t] = prod_{i<=t} (1 - beta[i])`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::tensor::{Tensor, TensorError};

/// Linear endpoints of the reference 1000-step schedule.
pub const REFERENCE_BETA_START: f64 = 1e-4;
pub const REFERENCE_BETA_END: f64 = 0.02;
pub const REFERENCE_STEPS: usize = 1000;
pub const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedule needs at least one step")]
    NoSteps,
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("beta[{index}] = {value} outside [0, 1)")]
    InvalidBeta { index: usize, value: f64 },
    #[error("{got} step indices for a batch of {batch}")]
    BatchMismatch { got: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Serializable description of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    /// Linear endpoints as quoted for a 1000-step schedule; rescaled by
    /// `1000 / steps` for other lengths.
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Desk scale: 200 cosine steps. The full-scale preset is the 1000-step
/// linear schedule.
impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            steps: 200,
            beta_start: REFERENCE_BETA_START,
            beta_end: REFERENCE_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn full_scale() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            steps: REFERENCE_STEPS,
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        match self.kind {
            ScheduleKind::Linear => NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end),
            ScheduleKind::Cosine => NoiseSchedule::cosine(self.steps),
        }
    }
}

/// Precomputed per-step tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    posterior_variance: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas between the reference endpoints, scaled by
    /// `1000 / steps` and capped at [`MAX_BETA`].
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if steps == 0 {
            return Err(ScheduleError::NoSteps);
        }
        let scale = REFERENCE_STEPS as f64 / steps as f64;
        let (lo, hi) = (beta_start * scale, beta_end * scale);
        let betas = (0..steps)
            .map(|i| {
                let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                (lo + (hi - lo) * f).min(MAX_BETA)
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Betas from the squared-cosine cumulative curve, capped at
    /// [`MAX_BETA`].
    pub fn cosine(steps: usize) -> Result<Self, ScheduleError> {
        if steps == 0 {
            return Err(ScheduleError::NoSteps);
        }
        let f = |t: usize| {
            let c = math::cos((t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * core::f64::consts::FRAC_PI_2);
            c * c
        };
        let betas = (1..=steps)
            .map(|t| (1.0 - f(t) / f(t - 1)).min(MAX_BETA))
            .collect();
        Self::from_betas(betas)
    }

    pub fn make(kind: ScheduleKind, steps: usize) -> Result<Self, ScheduleError> {
        ScheduleConfig {
            kind,
            steps,
            ..ScheduleConfig::default()
        }
        .build()
    }

    /// Explicit `beta[1..=T]`. Zero betas are accepted (a degenerate,
    /// noise-free schedule); their posterior variance is defined as 0.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::NoSteps);
        }
        if let Some((i, &b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(0.0..1.0).contains(*b))
        {
            return Err(ScheduleError::InvalidBeta { index: i + 1, value: b });
        }
        let steps = betas.len();
        let mut beta = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        beta.extend(betas);
        let mut alpha = vec![1.0; steps + 1];
        let mut posterior_variance = vec![0.0; steps + 1];
        for t in 1..=steps {
            alpha[t] = alpha[t - 1] * (1.0 - beta[t]);
            let denom = 1.0 - alpha[t];
            posterior_variance[t] = if denom > 0.0 {
                (1.0 - alpha[t - 1]) / denom * beta[t]
            } else {
                0.0
            };
        }
        Ok(Self {
            beta,
            alpha,
            posterior_variance,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    /// Cumulative product up to and including `t`; `alpha(0) == 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `(1 - alpha[t-1]) / (1 - alpha[t]) * beta[t]`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variance[t]
    }

    /// Standard deviation of the stochastic sampler's noise term.
    pub fn sigma(&self, t: usize) -> f64 {
        math::sqrt(self.posterior_variance[t])
    }

    pub fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.steps() {
            Err(ScheduleError::StepOutOfRange {
                t,
                steps: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    /// `sqrt(alpha[t]) * x0 + sqrt(1 - alpha[t]) * eps`, with one step index
    /// per sample of the `[N, ...]` batch.
    pub fn q_sample(&self, x0: &Tensor, t: &[usize], eps: &Tensor) -> Result<Tensor, ScheduleError> {
        if x0.shape() != eps.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "q_sample",
                lhs: x0.shape().to_vec(),
                rhs: eps.shape().to_vec(),
            }
            .into());
        }
        let batch = x0.shape()[0];
        if t.len() != batch {
            return Err(ScheduleError::BatchMismatch { got: t.len(), batch });
        }
        for &s in t {
            self.check_step(s)?;
        }
        let per = x0.numel() / batch;
        let mut out = Vec::with_capacity(x0.numel());
        for (n, &s) in t.iter().enumerate() {
            let a = math::sqrt(self.alpha[s]);
            let b = math::sqrt(1.0 - self.alpha[s]);
            let xs = &x0.data()[n * per..(n + 1) * per];
            let es = &eps.data()[n * per..(n + 1) * per];
            out.extend(xs.iter().zip(es).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32));
        }
        Ok(Tensor::new(x0.shape().to_vec(), out)?)
    }

    /// Applies the one-step transition `x <- sqrt(1 - beta) x + sqrt(beta) z`
    /// `t[n]` times to sample `n`, with fresh Gaussian draws each step.
    pub fn iterate_forward<R: Rng + ?Sized>(
        &self,
        x0: &Tensor,
        t: &[usize],
        rng: &mut R,
    ) -> Result<Tensor, ScheduleError> {
        let batch = x0.shape()[0];
        if t.len() != batch {
            return Err(ScheduleError::BatchMismatch { got: t.len(), batch });
        }
        for &s in t {
            self.check_step(s)?;
        }
        let per = x0.numel() / batch;
        let mut out = x0.data().to_vec();
        for (n, &s) in t.iter().enumerate() {
            let xs = &mut out[n * per..(n + 1) * per];
            for step in 1..=s {
                let keep = math::sqrt(1.0 - self.beta[step]);
                let noise = math::sqrt(self.beta[step]);
                for x in xs.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = (keep * *x as f64 + noise * z) as f32;
                }
            }
        }
        Ok(Tensor::new(x0.shape().to_vec(), out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step() -> NoiseSchedule {
        NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn hand_derived_two_step_fixture() {
        let s = two_step();
        assert_eq!(s.alpha(1), 0.5);
        assert_eq!(s.alpha(2), 0.25);
        assert_eq!(s.posterior_variance(1), 0.0);
        assert_eq!(s.posterior_variance(2), 1.0 / 3.0);
    }

    #[test]
    fn first_posterior_variance_is_exactly_zero() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [1, 2, 10, 200, 1000] {
                let s = NoiseSchedule::make(kind, steps).unwrap();
                assert_eq!(s.posterior_variance(1), 0.0);
            }
        }
    }

    #[test]
    fn generated_schedules_are_well_formed() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let s = NoiseSchedule::make(kind, 200).unwrap();
            for t in 1..=s.steps() {
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                assert!(s.alpha(t) < s.alpha(t - 1));
            }
            assert!(s.alpha(200) < 1e-3, "{kind:?} alpha_T = {}", s.alpha(200));
        }
    }

    #[test]
    fn linear_default_rescales_reference_endpoints() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 200).unwrap();
        assert!((s.beta(1) - 5e-4).abs() < 1e-15);
        assert!((s.beta(200) - 0.1).abs() < 1e-15);
        let full = ScheduleConfig::full_scale().build().unwrap();
        assert!((full.beta(1) - 1e-4).abs() < 1e-18);
        assert!((full.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_is_an_error() {
        assert_eq!(NoiseSchedule::linear(0, 1e-4, 0.02), Err(ScheduleError::NoSteps));
        assert_eq!(NoiseSchedule::cosine(0), Err(ScheduleError::NoSteps));
        assert!(NoiseSchedule::from_betas(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn q_sample_fixtures() {
        let s = two_step();
        let x0 = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
        let zero = Tensor::zeros([1, 1, 1, 1]);
        assert_eq!(s.q_sample(&x0, &[2], &zero).unwrap().data(), &[0.5]);
        let e = Tensor::new([1, 1, 1, 1], vec![2.0]).unwrap();
        let y = s.q_sample(&zero, &[2], &e).unwrap();
        assert!((y.data()[0] - 2.0 * 0.75f32.sqrt()).abs() < 1e-6);
        assert!(matches!(
            s.q_sample(&x0, &[3], &zero),
            Err(ScheduleError::StepOutOfRange { t: 3, steps: 2 })
        ));
        assert!(s.q_sample(&x0, &[0], &zero).is_err());
    }

    #[test]
    fn degenerate_schedule_leaves_input_unchanged() {
        let s = NoiseSchedule::from_betas(vec![0.0; 5]).unwrap();
        let x0 = Tensor::new([1, 3], vec![0.1, -0.4, 0.9]).unwrap();
        let mut rng = crate::rng::stream(1, 0);
        assert_eq!(s.iterate_forward(&x0, &[5], &mut rng).unwrap(), x0);
    }
}
