//! Conditional diffusion restoration for fundus-like images.
//!
//! The crate is `no_std` (it needs `alloc`). It holds the numerical pieces:
//! a small reverse-mode autodiff tensor library, a conditional U-Net noise
//! estimator with Adam, noise schedules, the training objective and reverse
//! samplers, parametric degradations, synthetic phantoms and image metrics.
//! File formats, the command line and everything else touching the OS live in
//! the companion `led` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod degrade;
pub mod diffusion;
pub mod image;
pub(crate) mod math;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use image::{Image, Mask};
pub use tensor::{Tape, Tensor, TensorError, Var};
