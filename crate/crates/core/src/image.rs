//! Channel-planar images in the `[-1, 1]` value convention, and binary masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Tensor, TensorError};

pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// `[C, H, W]` image; `-1` is black and `1` is white.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Option<Self> {
        (channels * height * width == data.len() && !data.is_empty()).then_some(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamp(mut self, lo: f32, hi: f32) -> Self {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
        self
    }

    /// Single-plane intensity: the image itself for one channel, standard
    /// luma weights for three, the channel mean otherwise.
    pub fn luminance(&self) -> Vec<f32> {
        let n = self.height * self.width;
        match self.channels {
            1 => self.data.clone(),
            3 => (0..n)
                .map(|i| LUMA[0] * self.data[i] + LUMA[1] * self.data[n + i] + LUMA[2] * self.data[2 * n + i])
                .collect(),
            c => (0..n)
                .map(|i| (0..c).map(|k| self.data[k * n + i]).sum::<f32>() / c as f32)
                .collect(),
        }
    }

    /// `[1, C, H, W]` tensor view of the image.
    pub fn to_tensor(&self) -> Result<Tensor, TensorError> {
        Tensor::new([1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Stacks equally sized images into an `[N, C, H, W]` batch.
    pub fn batch(images: &[Image]) -> Result<Tensor, TensorError> {
        let first = images.first().ok_or(TensorError::InvalidShape {
            shape: Vec::new(),
            len: 0,
        })?;
        let mut data = Vec::with_capacity(first.data.len() * images.len());
        for img in images {
            if !img.same_dims(first) {
                return Err(TensorError::ShapeMismatch {
                    op: "batch",
                    lhs: vec![first.channels, first.height, first.width],
                    rhs: vec![img.channels, img.height, img.width],
                });
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::new([images.len(), first.channels, first.height, first.width], data)
    }

    /// Splits an `[N, C, H, W]` tensor back into images.
    pub fn unbatch(t: &Tensor) -> Vec<Image> {
        let [n, c, h, w] = <[usize; 4]>::try_from(t.shape()).expect("rank-4 batch");
        let per = c * h * w;
        (0..n)
            .map(|i| Image {
                channels: c,
                height: h,
                width: w,
                data: t.data()[i * per..(i + 1) * per].to_vec(),
            })
            .collect()
    }
}

/// Binary `[H, W]` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Option<Self> {
        (height * width == data.len()).then_some(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_round_trip() {
        let a = Image::filled(1, 2, 2, 0.5);
        let b = Image::filled(1, 2, 2, -0.5);
        let t = Image::batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(Image::unbatch(&t), vec![a, b]);
    }

    #[test]
    fn luminance_of_gray_rgb_is_gray() {
        let img = Image::filled(3, 2, 2, 0.25);
        for v in img.luminance() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }
}
