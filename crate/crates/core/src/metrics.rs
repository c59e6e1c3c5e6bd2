//! Image quality metrics: FCNR over a dilated vessel ROI, PSNR and SSIM.
//!
//! Multi-channel images are reduced to luminance for FCNR and averaged over
//! channels for SSIM.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{Image, Mask};
use crate::math;

/// Peak-to-peak range of the `[-1, 1]` value convention.
pub const DATA_RANGE: f64 = 2.0;
pub const FCNR_RADIUS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("vessel mask is empty")]
    EmptyVessel,
    #[error("region of interest has no background pixels")]
    EmptyBackground,
    #[error("degenerate contrast: intensity is constant over the region of interest")]
    DegenerateContrast,
    #[error("image {height}x{width} is smaller than the {window}-pixel window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
}

fn dims(img: &Image) -> (usize, usize, usize) {
    (img.channels(), img.height(), img.width())
}

fn check_same(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(MetricError::ShapeMismatch(dims(a), dims(b)))
    }
}

/// Offsets `(dy, dx)` with `dy² + dx² ≤ radius²`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Union of Euclidean disks of `radius` centred on every set pixel.
pub fn dilate_disk(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let offsets = disk_offsets(radius);
    let mut out = Mask::empty(mask.height(), mask.width());
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y as usize, x as usize) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (py, px) = (y + dy, x + dx);
                if (0..h).contains(&py) && (0..w).contains(&px) {
                    out.set(py as usize, px as usize, true);
                }
            }
        }
    }
    out
}

/// The pixel sets and statistics behind one FCNR value.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnrRegions {
    pub vessel: Mask,
    pub background: Mask,
    pub roi: Mask,
    pub mu_v: f64,
    pub mu_b: f64,
    pub sigma_r: f64,
}

impl FcnrRegions {
    pub fn fcnr(&self) -> f64 {
        (self.mu_b - self.mu_v).abs() / self.sigma_r
    }
}

fn masked_mean(values: &[f32], mask: &Mask) -> f64 {
    let (sum, n) = values
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .fold((0.0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    sum / n as f64
}

/// Builds the ROI by dilating `vessel` and computes its statistics on a
/// single plane of row-major `values`.
pub fn fcnr_regions(values: &[f32], vessel: &Mask, radius: usize) -> Result<FcnrRegions, MetricError> {
    if vessel.count() == 0 {
        return Err(MetricError::EmptyVessel);
    }
    let roi = dilate_disk(vessel, radius);
    let background = Mask::new(
        roi.height(),
        roi.width(),
        roi.data().iter().zip(vessel.data()).map(|(&r, &v)| r && !v).collect(),
    )
    .expect("dimensions come from the roi");
    if background.count() == 0 {
        return Err(MetricError::EmptyBackground);
    }
    let mu_v = masked_mean(values, vessel);
    let mu_b = masked_mean(values, &background);
    let mu_r = masked_mean(values, &roi);
    let var = values
        .iter()
        .zip(roi.data())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| (v as f64 - mu_r) * (v as f64 - mu_r))
        .sum::<f64>()
        / roi.count() as f64;
    let sigma_r = math::sqrt(var);
    if sigma_r == 0.0 {
        return Err(MetricError::DegenerateContrast);
    }
    Ok(FcnrRegions {
        vessel: vessel.clone(),
        background,
        roi,
        mu_v,
        mu_b,
        sigma_r,
    })
}

/// `|μ_B − μ_V| / σ_R` over the disk-dilated vessel ROI.
pub fn fcnr(image: &Image, vessel: &Mask, radius: usize) -> Result<f64, MetricError> {
    if (image.height(), image.width()) != (vessel.height(), vessel.width()) {
        return Err(MetricError::ShapeMismatch(
            dims(image),
            (1, vessel.height(), vessel.width()),
        ));
    }
    let regions = if image.channels() == 1 {
        fcnr_regions(image.data(), vessel, radius)?
    } else {
        fcnr_regions(&image.luminance(), vessel, radius)?
    };
    Ok(regions.fcnr())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(max² / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, max_value: f64) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(max_value * max_value / m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: DATA_RANGE,
        }
    }
}

/// Mean SSIM with the default Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean local SSIM over all fully contained window positions, averaged over
/// channels.
pub fn ssim_with(a: &Image, b: &Image, p: &SsimParams) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let (h, w, n) = (a.height(), a.width(), p.window);
    if h < n || w < n {
        return Err(MetricError::TooSmall {
            height: h,
            width: w,
            window: n,
        });
    }
    let g = gaussian_window(n, p.sigma);
    let c1 = (p.k1 * p.range) * (p.k1 * p.range);
    let c2 = (p.k2 * p.range) * (p.k2 * p.range);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let mut sum = 0.0;
        for y in 0..=h - n {
            for x in 0..=w - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..n {
                    for i in 0..n {
                        let wt = g[j * n + i];
                        let va = pa[(y + j) * w + x + i] as f64;
                        let vb = pb[(y + j) * w + x + i] as f64;
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += sum / ((h - n + 1) * (w - n + 1)) as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Normalized 2-D Gaussian of `n × n` taps.
pub fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (dy, dx) = (j as f64 - c, i as f64 - c);
            g[j * n + i] = math::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        }
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}
