//! Small conditional U-Net predicting the noise in `x_t` given `t` and a
//! conditioning image.
//!
//! The noisy image and the condition are concatenated along channels. Each
//! level runs `conv -> norm -> (+ time) -> SiLU -> conv -> norm -> SiLU`;
//! encoder levels are joined by 2× average pooling, decoder levels by
//! nearest-neighbour upsampling and skip concatenation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{time_embeddings, Bindings, NnError, ParameterSet};
use crate::math;
use crate::tensor::{Conv2dParams, Tape, Tensor, Var};

const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels of the image being restored (the network sees twice this).
    pub image_channels: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub base_channels: usize,
    pub time_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 1,
            depth: 2,
            base_channels: 16,
            time_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct Linear {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    norm1: Norm,
    time: Linear,
    conv2: Conv,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    time_mlp: Linear,
    down: Vec<Block>,
    mid: Block,
    up: Vec<Block>,
    out: Conv,
}

/// The noise estimator: architecture plus its parameters.
#[derive(Debug, Clone)]
pub struct NoiseEstimator {
    config: ModelConfig,
    params: ParameterSet,
    layout: Layout,
}

struct Builder<'r, R: Rng + ?Sized> {
    params: ParameterSet,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<usize, NnError> {
        let bound = math::sqrt(6.0 / fan_in as f64) as f32;
        let t = Tensor::uniform(shape.to_vec(), -bound, bound, self.rng);
        self.params.insert(&name, t)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Conv, NnError> {
        let weight = self.kaiming(format!("{name}.weight"), &[cout, cin, 3, 3], cin * 9)?;
        let bias = if bias {
            Some(self.params.insert(&format!("{name}.bias"), Tensor::zeros([cout]))?)
        } else {
            None
        };
        Ok(Conv { weight, bias })
    }

    fn norm(&mut self, name: &str, ch: usize) -> Result<Norm, NnError> {
        Ok(Norm {
            gamma: self.params.insert(&format!("{name}.gamma"), Tensor::full([ch], 1.0))?,
            beta: self.params.insert(&format!("{name}.beta"), Tensor::zeros([ch]))?,
        })
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) -> Result<Linear, NnError> {
        Ok(Linear {
            weight: self.kaiming(format!("{name}.weight"), &[fin, fout], fin)?,
            bias: self.params.insert(&format!("{name}.bias"), Tensor::zeros([fout]))?,
        })
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, time_dim: usize) -> Result<Block, NnError> {
        Ok(Block {
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, false)?,
            norm1: self.norm(&format!("{name}.norm1"), cout)?,
            time: self.linear(&format!("{name}.time"), time_dim, cout)?,
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, false)?,
            norm2: self.norm(&format!("{name}.norm2"), cout)?,
        })
    }
}

impl NoiseEstimator {
    /// Fresh parameters: Kaiming-uniform (fan-in) weights, zero biases, unit
    /// norm gains, and an all-zero output convolution so the initial noise
    /// prediction is exactly zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, NnError> {
        if config.time_dim == 0 || !config.time_dim.is_multiple_of(2) {
            return Err(NnError::OddEmbeddingDim(config.time_dim));
        }
        let mut b = Builder {
            params: ParameterSet::new(),
            rng,
        };
        let td = config.time_dim;
        let ch = |level: usize| config.base_channels << level;
        let time_mlp = b.linear("time_mlp", td, td)?;
        let mut down = Vec::with_capacity(config.depth);
        let mut cin = 2 * config.image_channels;
        for level in 0..config.depth {
            down.push(b.block(&format!("down{level}"), cin, ch(level), td)?);
            cin = ch(level);
        }
        let mid = b.block("mid", cin, ch(config.depth), td)?;
        let mut up = Vec::with_capacity(config.depth);
        let mut below = ch(config.depth);
        for level in (0..config.depth).rev() {
            up.push(b.block(&format!("up{level}"), below + ch(level), ch(level), td)?);
            below = ch(level);
        }
        let out = Conv {
            weight: b.params.insert(
                "out.weight",
                Tensor::zeros([config.image_channels, config.base_channels, 3, 3]),
            )?,
            bias: Some(b.params.insert("out.bias", Tensor::zeros([config.image_channels]))?),
        };
        Ok(Self {
            config,
            params: b.params,
            layout: Layout {
                time_mlp,
                down,
                mid,
                up,
                out,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Spatial extents must be multiples of this.
    pub fn extent_multiple(&self) -> usize {
        1 << self.config.depth
    }

    /// Differentiable forward pass. `noisy` and `cond` are `[N, C, H, W]`,
    /// `t` holds one step index per sample.
    pub fn forward<'t>(
        &self,
        bound: &Bindings<'t>,
        noisy: &Var<'t>,
        t: &[usize],
        cond: &Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        self.check_input(noisy.shape(), cond.shape(), t.len())?;
        let p = |id: usize| bound.var(id);
        let conv = |x: &Var<'t>, c: &Conv| -> Result<Var<'t>, NnError> {
            let y = x.conv2d(p(c.weight), Conv2dParams { stride: 1, padding: 1 })?;
            Ok(match c.bias {
                Some(b) => y.add_channel(p(b))?,
                None => y,
            })
        };
        let linear = |x: &Var<'t>, l: &Linear| -> Result<Var<'t>, NnError> {
            Ok(x.matmul(p(l.weight))?.add_channel(p(l.bias))?)
        };
        let norm = |x: &Var<'t>, n: &Norm| -> Result<Var<'t>, NnError> {
            Ok(x.channel_norm(p(n.gamma), p(n.beta), NORM_EPS)?)
        };
        let block = |x: &Var<'t>, b: &Block, temb: &Var<'t>| -> Result<Var<'t>, NnError> {
            let h = norm(&conv(x, &b.conv1)?, &b.norm1)?;
            let h = h.add_channel(&linear(temb, &b.time)?)?.silu()?;
            Ok(norm(&conv(&h, &b.conv2)?, &b.norm2)?.silu()?)
        };

        let emb = Var::constant(time_embeddings(t, self.config.time_dim)?);
        let temb = linear(&emb, &self.layout.time_mlp)?.silu()?;

        let mut h = Var::concat(&[noisy, cond], 1)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        for b in &self.layout.down {
            let out = block(&h, b, &temb)?;
            h = out.avg_pool2()?;
            skips.push(out);
        }
        h = block(&h, &self.layout.mid, &temb)?;
        for b in &self.layout.up {
            let skip = skips.pop().expect("one skip per level");
            let up = h.upsample2()?;
            h = block(&Var::concat(&[&up, &skip], 1)?, b, &temb)?;
        }
        conv(&h, &self.layout.out)
    }

    /// Tape-free prediction.
    pub fn predict(&self, noisy: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor, NnError> {
        let bound = self.params.bind(None);
        let out = self.forward(
            &bound,
            &Var::constant(noisy.clone()),
            t,
            &Var::constant(cond.clone()),
        )?;
        Ok(out.into_tensor())
    }

    /// Runs `forward` on a fresh tape and returns the tape-bound output,
    /// for callers that build their own loss.
    pub fn forward_on<'t>(
        &self,
        tape: &'t Tape,
        noisy: &Tensor,
        t: &[usize],
        cond: &Tensor,
    ) -> Result<(Bindings<'t>, Var<'t>), NnError> {
        let bound = self.params.bind(Some(tape));
        let out = self.forward(
            &bound,
            &Var::constant(noisy.clone()),
            t,
            &Var::constant(cond.clone()),
        )?;
        Ok((bound, out))
    }

    fn check_input(&self, noisy: &[usize], cond: &[usize], steps: usize) -> Result<(), NnError> {
        if noisy != cond {
            return Err(NnError::ConditionShape {
                noisy: noisy.to_vec(),
                cond: cond.to_vec(),
            });
        }
        let [n, c, h, w] = <[usize; 4]>::try_from(noisy).map_err(|_| NnError::ConditionShape {
            noisy: noisy.to_vec(),
            cond: cond.to_vec(),
        })?;
        if c != self.config.image_channels {
            return Err(NnError::ChannelMismatch {
                expected: self.config.image_channels,
                got: c,
            });
        }
        let factor = self.extent_multiple();
        for extent in [h, w] {
            if extent % factor != 0 {
                return Err(NnError::IndivisibleExtent { extent, factor });
            }
        }
        if steps != n {
            return Err(NnError::BatchMismatch { got: steps, batch: n });
        }
        Ok(())
    }
}
