//! Synthetic fundus-like images with ground-truth masks.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::degrade::filters;
use crate::image::{Image, Mask};
use crate::math;
use crate::rng::{derive_seed, stream, StreamRng};

pub const MIN_SIZE: usize = 16;
pub const MIN_VESSEL_FRACTION: f64 = 0.01;
pub const MAX_VESSEL_FRACTION: f64 = 0.15;
const MAX_ATTEMPTS: u64 = 256;
const FOV_RADIUS: f64 = 0.46;
/// Vessels stop this many pixels inside the field-of-view rim, capped at a
/// fraction of the size for small phantoms.
const RIM_MARGIN: f64 = 4.0;
const RIM_MARGIN_FRACTION: f64 = 0.12;

const BACKGROUND: f32 = 0.45;
const DISC: f32 = 0.92;
const VESSEL: f32 = 0.12;
/// Per-channel intensity scale in 3-channel mode (red-dominant fundus tint).
const TINT: [f32; 3] = [1.0, 0.72, 0.45];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PhantomError {
    #[error("phantom size {0} is below the minimum of 16")]
    TooSmall(usize),
    #[error("phantoms have 1 or 3 channels, got {0}")]
    Channels(usize),
    #[error("a dataset needs at least 2 phantoms, got {0}")]
    TooFew(usize),
    #[error("no admissible vessel tree after {0} attempts")]
    Exhausted(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub size: usize,
    #[serde(default = "one")]
    pub channels: usize,
}

fn one() -> usize {
    1
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 32,
            channels: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Image,
    pub vessel: Mask,
    pub disc: Mask,
    pub fov: Mask,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Phantom>,
    pub val: Vec<Phantom>,
}

/// Grayscale phantom of `size × size`.
pub fn generate(size: usize, seed: u64) -> Result<Phantom, PhantomError> {
    generate_with(&PhantomConfig { size, channels: 1 }, seed)
}

pub fn generate_with(config: &PhantomConfig, seed: u64) -> Result<Phantom, PhantomError> {
    let size = config.size;
    if size < MIN_SIZE {
        return Err(PhantomError::TooSmall(size));
    }
    if config.channels != 1 && config.channels != 3 {
        return Err(PhantomError::Channels(config.channels));
    }
    let fov = fov_mask(size);
    let fov_count = fov.count() as f64;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream(seed, attempt);
        let layout = Layout::draw(size, &mut rng);
        let disc = layout.disc_mask(&fov);
        let vessel = grow_vessels(&layout, &fov, &disc, &mut rng);
        let fraction = vessel.count() as f64 / fov_count;
        if (MIN_VESSEL_FRACTION..=MAX_VESSEL_FRACTION).contains(&fraction) {
            let image = render(config.channels, &layout, &fov, &disc, &vessel);
            return Ok(Phantom {
                image,
                vessel,
                disc,
                fov,
                seed,
            });
        }
    }
    Err(PhantomError::Exhausted(MAX_ATTEMPTS))
}

/// `count` phantoms with per-item seeds derived from `seed`.
pub fn generate_batch(config: &PhantomConfig, count: usize, seed: u64) -> Result<Vec<Phantom>, PhantomError> {
    (0..count)
        .map(|i| generate_with(config, derive_seed(seed, i as u64)))
        .collect()
}

/// Generates `count` phantoms and splits them by index: the last
/// `max(1, count / 10)` form the validation set.
pub fn make_dataset(count: usize, size: usize, seed: u64) -> Result<Dataset, PhantomError> {
    make_dataset_with(&PhantomConfig { size, channels: 1 }, count, seed)
}

pub fn make_dataset_with(config: &PhantomConfig, count: usize, seed: u64) -> Result<Dataset, PhantomError> {
    if count < 2 {
        return Err(PhantomError::TooFew(count));
    }
    let mut train = generate_batch(config, count, seed)?;
    let val = train.split_off(count - (count / 10).max(1));
    Ok(Dataset { train, val })
}

fn fov_mask(size: usize) -> Mask {
    let c = size as f64 / 2.0;
    let r = FOV_RADIUS * size as f64;
    let mut m = Mask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - c, x as f64 + 0.5 - c);
            m.set(y, x, dy * dy + dx * dx <= r * r);
        }
    }
    m
}

struct Layout {
    size: usize,
    disc_center: (f64, f64),
    disc_radius: f64,
    gradient: (f64, f64),
    branches: usize,
    widths: Vec<usize>,
    angles: Vec<f64>,
}

impl Layout {
    fn draw(size: usize, rng: &mut StreamRng) -> Self {
        let s = size as f64;
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let disc_center = (
            s / 2.0 + rng.random_range(-0.06..0.06) * s,
            s / 2.0 + side * rng.random_range(0.18..0.26) * s,
        );
        let disc_radius = rng.random_range(0.07..0.1) * s;
        let theta: f64 = rng.random_range(0.0..core::f64::consts::TAU);
        let gradient = (math::sin(theta) * 0.08, math::cos(theta) * 0.08);
        let branches = rng.random_range(2..=4);
        let offset: f64 = rng.random_range(0.0..core::f64::consts::TAU);
        let angles = (0..branches)
            .map(|b| offset + core::f64::consts::TAU * b as f64 / branches as f64 + rng.random_range(-0.4..0.4))
            .collect();
        let widths = (0..branches).map(|_| rng.random_range(1..=2)).collect();
        Self {
            size,
            disc_center,
            disc_radius,
            gradient,
            branches,
            widths,
            angles,
        }
    }

    fn disc_mask(&self, fov: &Mask) -> Mask {
        let mut m = Mask::empty(self.size, self.size);
        let (cy, cx) = self.disc_center;
        let r2 = self.disc_radius * self.disc_radius;
        for y in 0..self.size {
            for x in 0..self.size {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                m.set(y, x, fov.get(y, x) && dy * dy + dx * dx <= r2);
            }
        }
        m
    }
}

struct Walker {
    y: f64,
    x: f64,
    angle: f64,
    width: usize,
    remaining: usize,
    depth: u8,
}

/// Branching random walks starting at the disc rim.
fn grow_vessels(layout: &Layout, fov: &Mask, disc: &Mask, rng: &mut StreamRng) -> Mask {
    let size = layout.size;
    let mut m = Mask::empty(size, size);
    let (cy, cx) = layout.disc_center;
    let length = (0.42 * size as f64) as usize;
    let centre = size as f64 / 2.0;
    let reach = FOV_RADIUS * size as f64 - RIM_MARGIN.min(RIM_MARGIN_FRACTION * size as f64);
    let mut stack: Vec<Walker> = (0..layout.branches)
        .map(|b| {
            let a = layout.angles[b];
            Walker {
                y: cy + math::sin(a) * layout.disc_radius,
                x: cx + math::cos(a) * layout.disc_radius,
                angle: a,
                width: layout.widths[b],
                remaining: length,
                depth: 0,
            }
        })
        .collect();
    while let Some(mut w) = stack.pop() {
        while w.remaining > 0 {
            let (yi, xi) = (math::floor(w.y) as isize, math::floor(w.x) as isize);
            let (dy, dx) = (w.y - centre, w.x - centre);
            if dy * dy + dx * dx > reach * reach {
                break;
            }
            stamp(&mut m, fov, disc, yi, xi, w.width);
            if w.depth < 2 && rng.random_bool(0.06) {
                let turn = if rng.random_bool(0.5) { 0.6 } else { -0.6 };
                stack.push(Walker {
                    y: w.y,
                    x: w.x,
                    angle: w.angle + turn,
                    width: 1,
                    remaining: w.remaining / 2,
                    depth: w.depth + 1,
                });
            }
            let jitter: f64 = rng.sample(StandardNormal);
            w.angle += 0.25 * jitter;
            w.y += math::sin(w.angle);
            w.x += math::cos(w.angle);
            w.remaining -= 1;
        }
    }
    m
}

fn stamp(m: &mut Mask, fov: &Mask, disc: &Mask, y: isize, x: isize, width: usize) {
    for dy in 0..width as isize {
        for dx in 0..width as isize {
            let (py, px) = (y + dy, x + dx);
            if py < 0 || px < 0 || py >= m.height() as isize || px >= m.width() as isize {
                continue;
            }
            let (py, px) = (py as usize, px as usize);
            if fov.get(py, px) && !disc.get(py, px) {
                m.set(py, px, true);
            }
        }
    }
}

fn render(channels: usize, layout: &Layout, fov: &Mask, disc: &Mask, vessel: &Mask) -> Image {
    let size = layout.size;
    let s = size as f64;
    let mut base = Image::filled(1, size, size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let u = 2.0 * (x as f64 + 0.5) / s - 1.0;
            let v = 2.0 * (y as f64 + 0.5) / s - 1.0;
            let i = if vessel.get(y, x) {
                VESSEL
            } else if disc.get(y, x) {
                DISC
            } else {
                let shade = layout.gradient.0 * v + layout.gradient.1 * u - 0.12 * (u * u + v * v);
                BACKGROUND + shade as f32
            };
            base.set(0, y, x, i);
        }
    }
    let smooth = filters::gaussian_blur(&base, 0.5);
    let mut out = Image::filled(channels, size, size, -1.0);
    let tints: &[f32] = if channels == 3 { &TINT } else { &[1.0] };
    for (c, &tint) in tints.iter().enumerate() {
        for y in 0..size {
            for x in 0..size {
                if fov.get(y, x) {
                    let i = (smooth.get(0, y, x) * tint).clamp(0.0, 1.0);
                    out.set(c, y, x, 2.0 * i - 1.0);
                }
            }
        }
    }
    out
}
