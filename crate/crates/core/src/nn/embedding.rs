use alloc::vec::Vec;

use super::NnError;
use crate::math;
use crate::tensor::Tensor;

/// Sinusoidal step embedding: `sin(t / 10000^(2i/dim))` for the first half,
/// the matching cosines for the second half.
pub fn time_embedding(t: usize, dim: usize) -> Result<Tensor, NnError> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(NnError::OddEmbeddingDim(dim));
    }
    Ok(Tensor::new([dim], embed(t, dim))?)
}

/// `[N, dim]` embeddings, one row per step index.
pub fn time_embeddings(ts: &[usize], dim: usize) -> Result<Tensor, NnError> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(NnError::OddEmbeddingDim(dim));
    }
    let data: Vec<f32> = ts.iter().flat_map(|&t| embed(t, dim)).collect();
    Ok(Tensor::new([ts.len(), dim], data)?)
}

fn embed(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let angles: Vec<f64> = (0..half)
        .map(|i| t as f64 / math::pow(10_000.0, 2.0 * i as f64 / dim as f64))
        .collect();
    angles
        .iter()
        .map(|&a| math::sin(a) as f32)
        .chain(angles.iter().map(|&a| math::cos(a) as f32))
        .collect()
}
