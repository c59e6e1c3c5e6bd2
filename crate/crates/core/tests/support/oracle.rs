//! Independent pixel-loop implementations and fixtures for the metric and
//! forward-process checks.

use led_core::rng::stream;
use led_core::schedule::NoiseSchedule;
use led_core::tensor::Tensor;
use led_core::{Image, Mask};
use rand::Rng;
use rand_distr::StandardNormal;

/// A pixel is set when some set pixel lies within Euclidean distance `radius`.
pub fn naive_dilate(mask: &Mask, radius: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let r2 = (radius * radius) as isize;
    let mut out = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut hit = false;
            for sy in 0..h {
                for sx in 0..w {
                    let (dy, dx) = (sy as isize - y as isize, sx as isize - x as isize);
                    if mask.get(sy, sx) && dy * dy + dx * dx <= r2 {
                        hit = true;
                    }
                }
            }
            out.set(y, x, hit);
        }
    }
    out
}

/// FCNR by explicit loops over a single-channel image. `None` when the
/// vessel or background set is empty or the ROI has zero spread.
pub fn brute_fcnr(img: &Image, vessel: &Mask, radius: usize) -> Option<f64> {
    let (h, w) = (img.height(), img.width());
    let roi = naive_dilate(vessel, radius);
    let (mut sv, mut nv, mut sb, mut nb, mut sr, mut nr) = (0.0f64, 0usize, 0.0f64, 0usize, 0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            let v = img.get(0, y, x) as f64;
            if vessel.get(y, x) {
                sv += v;
                nv += 1;
            }
            if roi.get(y, x) && !vessel.get(y, x) {
                sb += v;
                nb += 1;
            }
            if roi.get(y, x) {
                sr += v;
                nr += 1;
            }
        }
    }
    if nv == 0 || nb == 0 {
        return None;
    }
    let (mu_v, mu_b, mu_r) = (sv / nv as f64, sb / nb as f64, sr / nr as f64);
    let mut ss = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            if roi.get(y, x) {
                let d = img.get(0, y, x) as f64 - mu_r;
                ss += d * d;
            }
        }
    }
    let sigma = (ss / nr as f64).sqrt();
    (sigma > 0.0).then(|| (mu_b - mu_v).abs() / sigma)
}

/// Random single-channel image in `[-1, 1]` with a sparse random vessel mask
/// that has at least one set and one unset pixel.
pub fn fcnr_fixture(size: usize, seed: u64) -> (Image, Mask) {
    let mut rng = stream(seed, 0);
    let data = (0..size * size).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    let mut vessel = Mask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            vessel.set(y, x, rng.random_bool(0.08));
        }
    }
    vessel.set(rng.random_range(0..size), rng.random_range(0..size), true);
    (Image::new(1, size, size, data).unwrap(), vessel)
}

/// Two vessel pixels at 0.2 and six background pixels at 0.8, all inside the
/// ROI.
pub fn eight_pixel_fixture() -> (Image, Mask, usize) {
    let img = Image::new(1, 2, 4, vec![0.8, 0.2, 0.2, 0.8, 0.8, 0.8, 0.8, 0.8]).unwrap();
    let mut v = Mask::empty(2, 4);
    v.set(0, 1, true);
    v.set(0, 2, true);
    (img, v, 2)
}

/// Sample mean and unbiased variance.
pub fn moments(xs: &[f32]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, Copy)]
pub struct MomentCheck {
    pub t: usize,
    pub iterated: (f64, f64),
    pub direct: (f64, f64),
    pub mean_z: f64,
    pub var_z: f64,
}

impl MomentCheck {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.mean_z.abs() <= sigmas && self.var_z.abs() <= sigmas
    }
}

/// Compares `samples` scalar draws of the iterated one-step chain against the
/// closed-form marginal at step `t`, in units of the combined standard error.
pub fn forward_moments(schedule: &NoiseSchedule, x0: f32, t: usize, samples: usize, seed: u64) -> MomentCheck {
    let start = Tensor::new(vec![samples, 1, 1, 1], vec![x0; samples]).unwrap();
    let steps = vec![t; samples];
    let iter = schedule.iterate_forward(&start, &steps, &mut stream(seed, 1)).unwrap();
    let mut rng = stream(seed, 2);
    let eps: Vec<f32> = (0..samples).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let eps = Tensor::new(vec![samples, 1, 1, 1], eps).unwrap();
    let direct = schedule.q_sample(&start, &steps, &eps).unwrap();
    let a = moments(iter.data());
    let b = moments(direct.data());
    let n = samples as f64;
    let se_mean = (a.1 / n + b.1 / n).sqrt();
    let se_var = (2.0 * a.1 * a.1 / (n - 1.0) + 2.0 * b.1 * b.1 / (n - 1.0)).sqrt();
    MomentCheck {
        t,
        iterated: a,
        direct: b,
        mean_z: (a.0 - b.0) / se_mean,
        var_z: (a.1 - b.1) / se_var,
    }
}
