use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffusionError, NoisePredictor};
use crate::math;
use crate::rng::{derive_seed, stream};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Default noise depth for direct enhancement, as a fraction of `T`.
pub const ONE_STEP_FRACTION: f64 = 0.8;
/// Default noise depth when refining a coarse enhancement.
pub const COARSE_TO_FINE_FRACTION: f64 = 0.2;

const INIT_SALT: u64 = 0x696e_6974;
const STEP_SALT: u64 = 0x7374_6570;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Noise depth `T_m`. `None` picks the mode's default fraction of `T`.
    pub noise_depth: Option<usize>,
    /// DDIM step stride.
    pub stride: usize,
    /// Range for `x̂0` estimates and the final output; `None` disables
    /// clipping.
    pub clip: Option<[f32; 2]>,
    /// Drop the `σ_t z` term of DDPM steps.
    pub zero_sigma: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddpm,
            noise_depth: None,
            stride: 1,
            clip: Some([-1.0, 1.0]),
            zero_sigma: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// `T_m`, falling back to `round(fraction · steps)`.
    pub fn depth(&self, steps: usize, fraction: f64) -> Result<usize, DiffusionError> {
        let depth = self
            .noise_depth
            .unwrap_or_else(|| math::round(fraction * steps as f64) as usize);
        if depth > steps {
            return Err(DiffusionError::DepthOutOfRange { depth, steps });
        }
        Ok(depth)
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            clip: self.clip,
            zero_sigma: self.zero_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub clip: Option<[f32; 2]>,
    pub zero_sigma: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            clip: Some([-1.0, 1.0]),
            zero_sigma: false,
        }
    }
}

fn clip(v: f64, range: Option<[f32; 2]>) -> f64 {
    match range {
        Some([lo, hi]) => v.clamp(lo as f64, hi as f64),
        None => v,
    }
}

fn finish(shape: &[usize], data: Vec<f32>) -> Result<Tensor, DiffusionError> {
    Ok(Tensor::new(shape.to_vec(), data)?)
}

/// One ancestral step `x_t → x_{t−1}`. With clipping enabled the mean is
/// the posterior mean around the clipped `x̂0`; without it, the usual
/// `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√(1−β_t)`. `σ_t z` is added for `t > 1`.
pub fn reverse_step_ddpm<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    x_t: &Tensor,
    t: usize,
    cond: &Tensor,
    rng: &mut R,
    opts: &StepOptions,
) -> Result<Tensor, DiffusionError> {
    schedule.check_step(t)?;
    let n = x_t.shape()[0];
    let eps = model.predict_noise(x_t, &vec![t; n], cond)?;
    let (beta, a_t, a_prev) = (schedule.beta(t), schedule.alpha(t), schedule.alpha(t - 1));
    let mut data: Vec<f32> = match opts.clip {
        Some(_) => {
            let c0 = math::sqrt(a_prev) * beta / (1.0 - a_t);
            let ct = math::sqrt(1.0 - beta) * (1.0 - a_prev) / (1.0 - a_t);
            x_t.data()
                .iter()
                .zip(eps.data())
                .map(|(&x, &e)| {
                    let x = x as f64;
                    let x0 = clip((x - math::sqrt(1.0 - a_t) * e as f64) / math::sqrt(a_t), opts.clip);
                    (c0 * x0 + ct * x) as f32
                })
                .collect()
        }
        None => {
            let k = beta / math::sqrt(1.0 - a_t);
            let scale = 1.0 / math::sqrt(1.0 - beta);
            x_t.data()
                .iter()
                .zip(eps.data())
                .map(|(&x, &e)| (scale * (x as f64 - k * e as f64)) as f32)
                .collect()
        }
    };
    let sigma = schedule.sigma(t) as f32;
    if t > 1 && !opts.zero_sigma && sigma > 0.0 {
        let z = Tensor::randn(x_t.shape(), rng);
        data.iter_mut().zip(z.data()).for_each(|(v, &z)| *v += sigma * z);
    }
    finish(x_t.shape(), data)
}

/// Deterministic (η = 0) step from `t` to `t_prev < t`.
pub fn reverse_step_ddim<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    cond: &Tensor,
    clip_range: Option<[f32; 2]>,
) -> Result<Tensor, DiffusionError> {
    schedule.check_step(t)?;
    if t_prev >= t {
        return Err(DiffusionError::StepOrder { t, t_prev });
    }
    let n = x_t.shape()[0];
    let eps = model.predict_noise(x_t, &vec![t; n], cond)?;
    let (a_t, a_prev) = (schedule.alpha(t), schedule.alpha(t_prev));
    let (sa, sn) = (math::sqrt(a_t), math::sqrt(1.0 - a_t));
    let (pa, pn) = (math::sqrt(a_prev), math::sqrt(1.0 - a_prev));
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| {
            let e = e as f64;
            let x0 = clip((x as f64 - sn * e) / sa, clip_range);
            (pa * x0 + pn * e) as f32
        })
        .collect();
    finish(x_t.shape(), data)
}

/// `(t, t_prev)` pairs from `depth` down to 0 in steps of `stride`.
pub fn ddim_grid(depth: usize, stride: usize) -> Vec<(usize, usize)> {
    let stride = stride.max(1);
    let mut out = Vec::with_capacity(depth.div_ceil(stride));
    let mut t = depth;
    while t > 0 {
        let prev = t.saturating_sub(stride);
        out.push((t, prev));
        t = prev;
    }
    out
}

/// Runs the configured sampler from `x` at step `depth` down to 0.
pub fn run_reverse<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    x: Tensor,
    depth: usize,
    cond: &Tensor,
    config: &SamplerConfig,
) -> Result<Tensor, DiffusionError> {
    if config.stride == 0 {
        return Err(DiffusionError::Config("sampler stride must be positive"));
    }
    let opts = config.step_options();
    let mut x = x;
    match config.kind {
        SamplerKind::Ddpm => {
            let key = derive_seed(config.seed, STEP_SALT);
            for t in (1..=depth).rev() {
                let mut rng = stream(key, t as u64);
                x = reverse_step_ddpm(model, schedule, &x, t, cond, &mut rng, &opts)?;
            }
        }
        SamplerKind::Ddim => {
            for (t, prev) in ddim_grid(depth, config.stride) {
                x = reverse_step_ddim(model, schedule, &x, t, prev, cond, opts.clip)?;
            }
        }
    }
    Ok(match opts.clip {
        Some([lo, hi]) => x.clamp(lo, hi),
        None => x,
    })
}

fn noise_then_reverse<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    cond: &Tensor,
    depth: usize,
    config: &SamplerConfig,
) -> Result<Tensor, DiffusionError> {
    if depth == 0 {
        return Ok(cond.clone());
    }
    let mut rng = stream(derive_seed(config.seed, INIT_SALT), 0);
    let eps = Tensor::randn(cond.shape(), &mut rng);
    let start = schedule.q_sample(cond, &vec![depth; cond.shape()[0]], &eps)?;
    run_reverse(model, schedule, start, depth, cond, config)
}

/// Noises `x` to depth `T_m` (default `0.8·T`) and denoises it conditioned
/// on `x` itself.
pub fn enhance<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    x: &Tensor,
    config: &SamplerConfig,
) -> Result<Tensor, DiffusionError> {
    let depth = config.depth(schedule.steps(), ONE_STEP_FRACTION)?;
    noise_then_reverse(model, schedule, x, depth, config)
}

/// Same mechanics as [`enhance`] applied to a coarse enhancement, with the
/// shallower default depth `0.2·T`.
pub fn refine<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    coarse: &Tensor,
    config: &SamplerConfig,
) -> Result<Tensor, DiffusionError> {
    let depth = config.depth(schedule.steps(), COARSE_TO_FINE_FRACTION)?;
    noise_then_reverse(model, schedule, coarse, depth, config)
}
