use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::degrade::DegradationSpec;
use crate::image::Image;
use crate::nn::{cosine_lr, Adam, AdamConfig, Checkpoint, ModelConfig, NnError, NoiseEstimator};
use crate::rng::{derive_seed, stream};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::tensor::{Tape, Tensor, TensorError};

const STEP_SALT: u64 = 0x0074_7261_696e;
const SHUFFLE_SALT: u64 = 0x7368_7566;

/// Which image of a training pair is noised and which conditions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Noise the clean image, condition on the degraded one.
    #[default]
    NoiseClean,
    /// Noise the degraded image, condition on the clean one.
    NoiseDegraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub pairing: Pairing,
    /// Half-cosine decay of the learning rate over `epochs`.
    pub cosine_decay: bool,
}

/// Desk scale: 30 epochs over 32×32 phantoms.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr: 2e-3,
            seed: 0,
            pairing: Pairing::NoiseClean,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    /// 150 epochs at batch 8 and learning rate 1e-5, for 512×512 data.
    pub fn full_scale() -> Self {
        Self {
            epochs: 150,
            batch_size: 8,
            lr: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DiffusionError::Config("epochs and batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DiffusionError::Config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// A clean image and, for paired data, its precomputed degraded version.
/// Without one, the degradation spec is applied on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub clean: Image,
    pub degraded: Option<Image>,
}

impl TrainingExample {
    pub fn clean(clean: Image) -> Self {
        Self { clean, degraded: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f32,
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: Vec<StepRecord>,
}

/// Owns the model, optimizer and schedule for one training run. All
/// randomness is keyed by the configured seed and the global step, so a
/// resumed run follows the same trajectory as an uninterrupted one.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: NoiseEstimator,
    optimizer: Adam,
    schedule: NoiseSchedule,
    schedule_config: ScheduleConfig,
    config: TrainConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(
        model: NoiseEstimator,
        schedule_config: ScheduleConfig,
        config: TrainConfig,
    ) -> Result<Self, DiffusionError> {
        config.validate()?;
        let schedule = schedule_config.build()?;
        let optimizer = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            model.params(),
        );
        Ok(Self {
            model,
            optimizer,
            schedule,
            schedule_config,
            config,
            epoch: 0,
        })
    }

    /// Restores model weights, optimizer moments and the epoch counter.
    pub fn resume(
        model_config: ModelConfig,
        checkpoint: &Checkpoint,
        config: TrainConfig,
    ) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut model = NoiseEstimator::new(model_config, &mut stream(0, 0))?;
        model.params_mut().load(&checkpoint.params)?;
        let state = checkpoint
            .optimizer
            .as_ref()
            .ok_or(DiffusionError::Config("checkpoint has no optimizer state"))?;
        let optimizer = Adam::from_state(state, model.params())?;
        let schedule = checkpoint.schedule.build()?;
        Ok(Self {
            model,
            optimizer,
            schedule,
            schedule_config: checkpoint.schedule.clone(),
            config,
            epoch: state.epoch as usize,
        })
    }

    pub fn model(&self) -> &NoiseEstimator {
        &self.model
    }

    pub fn into_model(self) -> NoiseEstimator {
        self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.optimizer.step_count()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.model.params().to_named(),
            optimizer: Some(self.optimizer.state(self.model.params(), self.epoch as u32)),
            schedule: self.schedule_config.clone(),
        }
    }

    fn non_finite(&self, op: &'static str) -> DiffusionError {
        DiffusionError::NonFinite {
            op,
            epoch: self.epoch,
            step: self.step(),
        }
    }

    fn tag(&self, e: DiffusionError) -> DiffusionError {
        match e {
            DiffusionError::Tensor(TensorError::NonFinite { op })
            | DiffusionError::Nn(NnError::Tensor(TensorError::NonFinite { op })) => self.non_finite(op),
            e => e,
        }
    }

    /// One optimizer step on `batch`: degrade, draw `t` and `ε`, noise the
    /// target, and minimize the noise-prediction MSE. Returns the loss.
    pub fn train_step(&mut self, batch: &[&TrainingExample], spec: &DegradationSpec) -> Result<f32, DiffusionError> {
        self.try_step(batch, spec).map_err(|e| self.tag(e))
    }

    fn try_step(&mut self, batch: &[&TrainingExample], spec: &DegradationSpec) -> Result<f32, DiffusionError> {
        if batch.is_empty() {
            return Err(DiffusionError::EmptyBatch);
        }
        let mut rng = stream(derive_seed(self.config.seed, STEP_SALT), self.step());
        let mut clean = Vec::with_capacity(batch.len());
        let mut degraded = Vec::with_capacity(batch.len());
        for ex in batch {
            let sample_seed = rng.next_u64();
            degraded.push(match &ex.degraded {
                Some(d) => d.clone(),
                None => spec.apply(&ex.clean, sample_seed)?,
            });
            clean.push(ex.clean.clone());
        }
        let clean = Image::batch(&clean)?;
        let degraded = Image::batch(&degraded)?;
        let steps = self.schedule.steps();
        let t: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(1..=steps)).collect();
        let eps = Tensor::randn(clean.shape(), &mut rng);
        let (target, cond) = match self.config.pairing {
            Pairing::NoiseClean => (clean, degraded),
            Pairing::NoiseDegraded => (degraded, clean),
        };
        let noisy = self.schedule.q_sample(&target, &t, &eps)?;

        let tape = Tape::new();
        let (bound, pred) = self.model.forward_on(&tape, &noisy, &t, &cond)?;
        let diff = pred.sub(&tape.leaf(eps))?;
        let loss = diff.mul(&diff)?.mean_all()?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(self.non_finite("loss"));
        }
        let grads = tape.backward(&loss)?;
        let params = self.model.params_mut();
        params.clear_grads();
        params.accumulate_grads(&bound, &grads);
        self.optimizer.step(params)?;
        if params.iter().any(|p| p.value().data().iter().any(|v| !v.is_finite())) {
            return Err(self.non_finite("optimizer step"));
        }
        Ok(value)
    }

    /// One pass over `data` in a seeded shuffled order; the final batch may
    /// be short.
    pub fn train_epoch(
        &mut self,
        data: &[TrainingExample],
        spec: &DegradationSpec,
    ) -> Result<EpochReport, DiffusionError> {
        if data.is_empty() {
            return Err(DiffusionError::EmptyBatch);
        }
        let lr = if self.config.cosine_decay {
            cosine_lr(self.config.lr, self.epoch, self.config.epochs)
        } else {
            self.config.lr
        };
        self.optimizer.set_lr(lr);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(derive_seed(self.config.seed, SHUFFLE_SALT), self.epoch as u64));
        let mut steps = Vec::with_capacity(data.len().div_ceil(self.config.batch_size));
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &data[i]).collect();
            let loss = self.train_step(&batch, spec)?;
            steps.push(StepRecord {
                epoch: self.epoch,
                step: self.step(),
                loss,
                lr,
            });
        }
        let mean_loss = steps.iter().map(|s| s.loss as f64).sum::<f64>() / steps.len() as f64;
        let report = EpochReport {
            epoch: self.epoch,
            mean_loss,
            steps,
        };
        self.epoch += 1;
        Ok(report)
    }
}
