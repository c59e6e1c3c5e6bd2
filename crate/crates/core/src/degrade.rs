//! Seeded, composable parametric degradations.
//!
//! A [`DegradationSpec`] is an ordered list of stages whose parameters are
//! ranges; each application draws concrete values from a stream keyed by the
//! spec's seed and a per-sample seed, so `(spec, sample seed, input)` fully
//! determines the output.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::math;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DegradeError {
    #[error("invalid degradation parameter: {0}")]
    InvalidParameter(&'static str),
}

/// One degradation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    /// Uneven illumination: a smooth multiplicative gain falling off along a
    /// random direction and towards the rim, plus a faint additive haze.
    /// `strength` 0 is the identity.
    Illumination { strength: f32 },
    /// Gaussian blur with sigma (pixels) drawn uniformly from the range.
    GaussianBlur { sigma_min: f32, sigma_max: f32 },
    /// Bright glare spots. Radii are fractions of the shorter image side.
    HaloSpots {
        count_min: u32,
        count_max: u32,
        radius_min: f32,
        radius_max: f32,
        intensity: f32,
    },
    /// Compression-like blocking: each block's mean and its residuals are
    /// quantized to `levels` levels.
    QuantizeBlocks { block: usize, levels: u32 },
    /// Box filter of odd `window`.
    MeanFilter { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Mild,
    Default,
    Harsh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub stages: Vec<Stage>,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        make_training_spec(Preset::Default, 0)
    }
}

/// Stock specs for training-pair generation.
pub fn make_training_spec(preset: Preset, seed: u64) -> DegradationSpec {
    let stages = match preset {
        Preset::Mild => vec![
            Stage::Illumination { strength: 0.15 },
            Stage::GaussianBlur {
                sigma_min: 0.3,
                sigma_max: 0.7,
            },
            Stage::HaloSpots {
                count_min: 0,
                count_max: 1,
                radius_min: 0.1,
                radius_max: 0.2,
                intensity: 0.2,
            },
        ],
        Preset::Default => vec![
            Stage::Illumination { strength: 0.3 },
            Stage::GaussianBlur {
                sigma_min: 0.5,
                sigma_max: 1.5,
            },
            Stage::HaloSpots {
                count_min: 1,
                count_max: 3,
                radius_min: 0.1,
                radius_max: 0.25,
                intensity: 0.35,
            },
        ],
        Preset::Harsh => vec![
            Stage::Illumination { strength: 0.5 },
            Stage::GaussianBlur {
                sigma_min: 1.2,
                sigma_max: 2.2,
            },
            Stage::HaloSpots {
                count_min: 2,
                count_max: 4,
                radius_min: 0.15,
                radius_max: 0.3,
                intensity: 0.5,
            },
            Stage::QuantizeBlocks {
                block: 8,
                levels: 16,
            },
        ],
    };
    DegradationSpec { stages, seed }
}

impl DegradationSpec {
    /// No stages: the identity degradation.
    pub fn identity(seed: u64) -> Self {
        Self {
            stages: Vec::new(),
            seed,
        }
    }

    /// Runs `self` then `next`. Per-stage randomness is keyed by position in
    /// the combined list.
    pub fn then(mut self, next: DegradationSpec) -> Self {
        self.stages.extend(next.stages);
        self
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        for stage in &self.stages {
            match *stage {
                Stage::Illumination { strength } if !(0.0..=1.0).contains(&strength) => {
                    return Err(DegradeError::InvalidParameter("illumination strength outside [0, 1]"))
                }
                Stage::GaussianBlur { sigma_min, sigma_max } if !(0.0 <= sigma_min && sigma_min <= sigma_max) => {
                    return Err(DegradeError::InvalidParameter("blur sigma range"))
                }
                Stage::HaloSpots {
                    count_min,
                    count_max,
                    radius_min,
                    radius_max,
                    intensity,
                } if count_min > count_max
                    || !(0.0 < radius_min && radius_min <= radius_max)
                    || !(0.0..=1.0).contains(&intensity) =>
                {
                    return Err(DegradeError::InvalidParameter("halo spot ranges"))
                }
                Stage::QuantizeBlocks { block, levels } if block == 0 || levels < 2 => {
                    return Err(DegradeError::InvalidParameter("quantize block size or levels"))
                }
                Stage::MeanFilter { window } if window == 0 || window % 2 == 0 => {
                    return Err(DegradeError::InvalidParameter("mean filter window must be odd"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Degrades `image`; the output is clamped to `[-1, 1]`.
    pub fn apply(&self, image: &Image, sample_seed: u64) -> Result<Image, DegradeError> {
        self.validate()?;
        let key = derive_seed(self.seed, sample_seed);
        let mut img = image.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            let mut rng = stream(key, i as u64);
            img = apply_stage(stage, img, &mut rng);
        }
        Ok(img.clamp(-1.0, 1.0))
    }
}

fn apply_stage<R: Rng + ?Sized>(stage: &Stage, img: Image, rng: &mut R) -> Image {
    match *stage {
        Stage::Illumination { strength } => illumination(img, strength, rng),
        Stage::GaussianBlur { sigma_min, sigma_max } => {
            let sigma = if sigma_max > sigma_min {
                rng.random_range(sigma_min..sigma_max)
            } else {
                sigma_min
            };
            filters::gaussian_blur(&img, sigma)
        }
        Stage::HaloSpots {
            count_min,
            count_max,
            radius_min,
            radius_max,
            intensity,
        } => {
            let count = rng.random_range(count_min..=count_max);
            halo_spots(img, count, (radius_min, radius_max), intensity, rng)
        }
        Stage::QuantizeBlocks { block, levels } => quantize_blocks(img, block, levels),
        Stage::MeanFilter { window } => filters::box_filter(&img, window),
    }
}

fn illumination<R: Rng + ?Sized>(mut img: Image, strength: f32, rng: &mut R) -> Image {
    if strength == 0.0 {
        return img;
    }
    let (h, w) = (img.height(), img.width());
    let theta: f64 = rng.random_range(0.0..core::f64::consts::TAU);
    let tilt: f64 = rng.random_range(0.5..1.0);
    let vignette: f64 = rng.random_range(0.5..1.0);
    let haze: f64 = rng.random_range(0.0..0.2);
    let (dx, dy) = (math::cos(theta), math::sin(theta));
    let s = strength as f64;
    let mut gain = vec![0.0f64; h * w];
    let mut bias = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let u = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
            let v = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0;
            let along = 0.5 + 0.5 * (dx * u + dy * v);
            let radial = 0.5 * (u * u + v * v);
            gain[y * w + x] = (1.0 - s * (tilt * along + vignette * radial)).max(0.0);
            bias[y * w + x] = s * haze * (1.0 - along);
        }
    }
    for c in 0..img.channels() {
        for (i, p) in img.plane_mut(c).iter_mut().enumerate() {
            // i' = g·i + b in [0, 1] intensity, rewritten for [-1, 1] values.
            let g = gain[i];
            *p = (*p as f64 * g + (g - 1.0) + 2.0 * bias[i]) as f32;
        }
    }
    img
}

fn halo_spots<R: Rng + ?Sized>(
    mut img: Image,
    count: u32,
    (rmin, rmax): (f32, f32),
    intensity: f32,
    rng: &mut R,
) -> Image {
    let (h, w) = (img.height(), img.width());
    let side = h.min(w) as f32;
    for _ in 0..count {
        let cy = rng.random_range(0.2..0.8) * h as f32;
        let cx = rng.random_range(0.2..0.8) * w as f32;
        let r = if rmax > rmin {
            rng.random_range(rmin..rmax)
        } else {
            rmin
        } * side;
        let inv = 1.0 / (2.0 * r * r);
        for c in 0..img.channels() {
            let plane = img.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2);
                    let e = intensity * math::expf(-d2 * inv);
                    let p = &mut plane[y * w + x];
                    *p += e * (1.0 - *p);
                }
            }
        }
    }
    img
}

fn quantize_blocks(mut img: Image, block: usize, levels: u32) -> Image {
    let (h, w) = (img.height(), img.width());
    let step = 2.0 / (levels - 1) as f64;
    let q = |v: f64| math::round((v + 1.0) / step) * step - 1.0;
    for c in 0..img.channels() {
        let plane = img.plane_mut(c);
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
                let mut sum = 0.0f64;
                for y in by..ye {
                    for x in bx..xe {
                        sum += plane[y * w + x] as f64;
                    }
                }
                let mean = sum / ((ye - by) * (xe - bx)) as f64;
                let qm = q(mean);
                for y in by..ye {
                    for x in bx..xe {
                        let r = plane[y * w + x] as f64 - mean;
                        plane[y * w + x] = (qm + math::round(r / step) * step) as f32;
                    }
                }
            }
        }
    }
    img
}

/// Linear filters with reflect padding.
pub mod filters {
    use alloc::vec;
    use alloc::vec::Vec;

    use crate::image::Image;
    use crate::math;

    /// Mirror index into `0..n` without repeating the edge sample.
    pub fn reflect(i: isize, n: usize) -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n as isize - 1);
        let mut i = i.rem_euclid(period);
        if i >= n as isize {
            i = period - i;
        }
        i as usize
    }

    /// Separable convolution of every plane with a symmetric 1-D kernel
    /// (length `2r + 1`). Accumulates in `f64`.
    pub fn separable(img: &Image, kernel: &[f64]) -> Image {
        let r = (kernel.len() / 2) as isize;
        let (h, w) = (img.height(), img.width());
        let mut out = img.clone();
        let mut tmp = vec![0.0f64; h * w];
        for c in 0..img.channels() {
            let src = img.plane(c);
            for y in 0..h {
                for x in 0..w {
                    tmp[y * w + x] = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, &wt)| wt * src[y * w + reflect(x as isize + k as isize - r, w)] as f64)
                        .sum();
                }
            }
            let dst = out.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let v: f64 = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, &wt)| wt * tmp[reflect(y as isize + k as isize - r, h) * w + x])
                        .sum();
                    dst[y * w + x] = v as f32;
                }
            }
        }
        out
    }

    pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
        let s = sigma as f64;
        let r = math::ceil(3.0 * s) as isize;
        let k: Vec<f64> = (-r..=r)
            .map(|i| math::exp(-((i * i) as f64) / (2.0 * s * s)))
            .collect();
        let total: f64 = k.iter().sum();
        k.into_iter().map(|v| v / total).collect()
    }

    /// Gaussian blur; sigmas below 1e-3 leave the image untouched.
    pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
        if sigma < 1e-3 {
            return img.clone();
        }
        separable(img, &gaussian_kernel(sigma))
    }

    /// Mean over a `window × window` neighbourhood (`window` odd).
    pub fn box_filter(img: &Image, window: usize) -> Image {
        if window <= 1 {
            return img.clone();
        }
        separable(img, &vec![1.0 / window as f64; window])
    }

    /// `x + amount · (x − blur(x))`, clamped to `[-1, 1]`.
    pub fn unsharp_mask(img: &Image, sigma: f32, amount: f32) -> Image {
        let blurred = gaussian_blur(img, sigma);
        let mut out = img.clone();
        for (o, b) in out.data_mut().iter_mut().zip(blurred.data()) {
            *o = (*o + amount * (*o - b)).clamp(-1.0, 1.0);
        }
        out
    }
}
