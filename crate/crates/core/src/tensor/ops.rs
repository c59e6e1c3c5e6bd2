//! Forward kernels and their backward rules.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::sgemm;
use super::tape::{GradSink, Tape, Var};
use super::{check_finite, Tensor, TensorError};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinaryOp,
        a: Option<usize>,
        b: Option<usize>,
        av: Arc<Tensor>,
        bv: Arc<Tensor>,
        out: Arc<Tensor>,
    },
    Scalar {
        kind: BinaryOp,
        a: usize,
        av: Arc<Tensor>,
        s: f32,
    },
    Reduce {
        kind: ReduceOp,
        a: usize,
        in_shape: Vec<usize>,
        reduced: Vec<bool>,
        count: usize,
    },
    Conv2d {
        x: Option<usize>,
        k: Option<usize>,
        xv: Arc<Tensor>,
        kv: Arc<Tensor>,
        params: Conv2dParams,
        out_hw: (usize, usize),
    },
    Reshape {
        a: usize,
    },
    Concat {
        parts: Vec<(Option<usize>, usize)>,
        outer: usize,
        inner: usize,
    },
    AvgPool2 {
        a: usize,
        in_shape: [usize; 4],
    },
    Upsample2 {
        a: usize,
        in_shape: [usize; 4],
    },
    Silu {
        a: usize,
        av: Arc<Tensor>,
    },
    ChannelNorm {
        x: Option<usize>,
        gamma: Option<usize>,
        beta: Option<usize>,
        gv: Arc<Tensor>,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        dims: (usize, usize, usize),
    },
    AddChannel {
        x: Option<usize>,
        v: Option<usize>,
        dims: (usize, usize, usize),
        per_sample: bool,
    },
    Matmul {
        a: Option<usize>,
        b: Option<usize>,
        av: Arc<Tensor>,
        bv: Arc<Tensor>,
        mkn: (usize, usize, usize),
    },
}

fn shared_tape<'t>(vars: &[&Var<'t>]) -> Result<Option<&'t Tape>, TensorError> {
    let mut found: Option<&'t Tape> = None;
    for v in vars {
        if let Some(t) = v.tape {
            match found {
                Some(f) if !f.same(t) => return Err(TensorError::DetachedTape),
                _ => found = Some(t),
            }
        }
    }
    Ok(found)
}

/// Wraps a freshly computed value, recording `op` when any input is tracked.
fn finish<'t>(
    op_name: &'static str,
    inputs: &[&Var<'t>],
    value: Tensor,
    op: impl FnOnce(Arc<Tensor>) -> Op,
) -> Result<Var<'t>, TensorError> {
    check_finite(op_name, value.data())?;
    let tape = shared_tape(inputs)?;
    let value = Arc::new(value);
    let tracked = inputs.iter().any(|v| v.node.is_some());
    let node = match (tracked, tape) {
        (true, Some(t)) => Some(t.push(op(value.clone()), value.numel())),
        _ => None,
    };
    Ok(Var { value, node, tape })
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4], TensorError> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(mismatch(op, shape, &[0, 0, 0, 0])),
    }
}

fn binary_name(kind: BinaryOp) -> &'static str {
    match kind {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::Pow => "pow",
    }
}

impl<'t> Var<'t> {
    pub fn binary(&self, kind: BinaryOp, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        let name = binary_name(kind);
        if self.shape() != other.shape() {
            return Err(mismatch(name, self.shape(), other.shape()));
        }
        let (a, b) = (self.value.data(), other.value.data());
        let data: Vec<f32> = match kind {
            BinaryOp::Add => a.iter().zip(b).map(|(x, y)| x + y).collect(),
            BinaryOp::Sub => a.iter().zip(b).map(|(x, y)| x - y).collect(),
            BinaryOp::Mul => a.iter().zip(b).map(|(x, y)| x * y).collect(),
            BinaryOp::Div => {
                if b.contains(&0.0) {
                    return Err(TensorError::ZeroDenominator { op: name });
                }
                a.iter().zip(b).map(|(x, y)| x / y).collect()
            }
            BinaryOp::Pow => {
                if a.iter().any(|&x| x <= 0.0) {
                    return Err(TensorError::Domain { op: name });
                }
                a.iter().zip(b).map(|(&x, &y)| math::powf(x, y)).collect()
            }
        };
        let value = Tensor::from_parts(self.shape().to_vec(), data);
        finish(name, &[self, other], value, |out| Op::Binary {
            kind,
            a: self.node,
            b: other.node,
            av: self.value.clone(),
            bv: other.value.clone(),
            out,
        })
    }

    pub fn scalar_op(&self, kind: BinaryOp, s: f32) -> Result<Var<'t>, TensorError> {
        let name = binary_name(kind);
        let a = self.value.data();
        let data: Vec<f32> = match kind {
            BinaryOp::Add => a.iter().map(|x| x + s).collect(),
            BinaryOp::Sub => a.iter().map(|x| x - s).collect(),
            BinaryOp::Mul => a.iter().map(|x| x * s).collect(),
            BinaryOp::Div => {
                if s == 0.0 {
                    return Err(TensorError::ZeroDenominator { op: name });
                }
                a.iter().map(|x| x / s).collect()
            }
            BinaryOp::Pow if s == 2.0 => a.iter().map(|x| x * x).collect(),
            BinaryOp::Pow => a.iter().map(|&x| math::powf(x, s)).collect(),
        };
        let value = Tensor::from_parts(self.shape().to_vec(), data);
        finish(name, &[self], value, |_| Op::Scalar {
            kind,
            a: self.node.unwrap_or(0),
            av: self.value.clone(),
            s,
        })
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn pow(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(BinaryOp::Pow, other)
    }

    pub fn add_scalar(&self, s: f32) -> Result<Var<'t>, TensorError> {
        self.scalar_op(BinaryOp::Add, s)
    }

    pub fn mul_scalar(&self, s: f32) -> Result<Var<'t>, TensorError> {
        self.scalar_op(BinaryOp::Mul, s)
    }

    pub fn div_scalar(&self, s: f32) -> Result<Var<'t>, TensorError> {
        self.scalar_op(BinaryOp::Div, s)
    }

    pub fn pow_scalar(&self, s: f32) -> Result<Var<'t>, TensorError> {
        self.scalar_op(BinaryOp::Pow, s)
    }

    /// Sum or mean over `axes`. Reduced axes are kept with extent 1 when
    /// `keep_dims`, dropped otherwise (a full reduction yields shape `[1]`).
    pub fn reduce(
        &self,
        kind: ReduceOp,
        axes: &[usize],
        keep_dims: bool,
    ) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        for &axis in axes {
            if axis >= rank {
                return Err(TensorError::AxisOutOfRange { axis, rank });
            }
            reduced[axis] = true;
        }
        let kept: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .map(|(&e, &r)| if r { 1 } else { e })
            .collect();
        let count: usize = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&e, _)| e)
            .product();
        let out_len: usize = kept.iter().product();
        let mut acc = vec![0.0f64; out_len];
        for_each_reduced_index(shape, &reduced, |i, o| acc[o] += self.value.data()[i] as f64);
        let scale = match kind {
            ReduceOp::Sum => 1.0,
            ReduceOp::Mean => 1.0 / count as f64,
        };
        let data: Vec<f32> = acc.iter().map(|&v| (v * scale) as f32).collect();
        let out_shape = if keep_dims {
            kept
        } else {
            let s: Vec<usize> = shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&e, _)| e)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        let name = match kind {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
        };
        let value = Tensor::from_parts(out_shape, data);
        finish(name, &[self], value, |_| Op::Reduce {
            kind,
            a: self.node.unwrap_or(0),
            in_shape: shape.to_vec(),
            reduced,
            count,
        })
    }

    pub fn sum_all(&self) -> Result<Var<'t>, TensorError> {
        let axes: Vec<usize> = (0..self.value.rank()).collect();
        self.reduce(ReduceOp::Sum, &axes, false)
    }

    pub fn mean_all(&self) -> Result<Var<'t>, TensorError> {
        let axes: Vec<usize> = (0..self.value.rank()).collect();
        self.reduce(ReduceOp::Mean, &axes, false)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>, TensorError> {
        let value = (*self.value).clone().reshape(shape)?;
        finish("reshape", &[self], value, |_| Op::Reshape {
            a: self.node.unwrap_or(0),
        })
    }

    /// 2-D cross-correlation of `[N, C, H, W]` input with `[F, C, kH, kW]`
    /// kernels.
    pub fn conv2d(&self, kernel: &Var<'t>, params: Conv2dParams) -> Result<Var<'t>, TensorError> {
        let [n, c, h, w] = dims4("conv2d", self.shape())?;
        let [f, kc, kh, kw] = dims4("conv2d", kernel.shape())?;
        if kc != c {
            return Err(mismatch("conv2d", self.shape(), kernel.shape()));
        }
        let (ho, wo) = conv_out_hw(h, w, kh, kw, params)?;
        let ckk = c * kh * kw;
        let mut cols = vec![0.0f32; ckk * ho * wo];
        let mut out = vec![0.0f32; n * f * ho * wo];
        let x = self.value.data();
        for b in 0..n {
            im2col(&x[b * c * h * w..(b + 1) * c * h * w], [c, h, w], kh, kw, params, (ho, wo), &mut cols);
            sgemm(
                f,
                ckk,
                ho * wo,
                kernel.value.data(),
                false,
                &cols,
                false,
                &mut out[b * f * ho * wo..(b + 1) * f * ho * wo],
                false,
            );
        }
        let value = Tensor::from_parts(vec![n, f, ho, wo], out);
        finish("conv2d", &[self, kernel], value, |_| Op::Conv2d {
            x: self.node,
            k: kernel.node,
            xv: self.value.clone(),
            kv: kernel.value.clone(),
            params,
            out_hw: (ho, wo),
        })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<'t>], axis: usize) -> Result<Var<'t>, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidShape {
            shape: Vec::new(),
            len: 0,
        })?;
        let rank = first.value.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        for p in parts {
            let s = p.shape();
            if s.len() != rank
                || s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(mismatch("concat", first.shape(), s));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                data.extend_from_slice(&p.value.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let value = Tensor::from_parts(shape, data);
        finish("concat", parts, value, |_| Op::Concat {
            parts: parts.iter().map(|p| (p.node, p.shape()[axis])).collect(),
            outer,
            inner,
        })
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&self) -> Result<Var<'t>, TensorError> {
        let [n, c, h, w] = dims4("avg_pool2", self.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                shape: self.shape().to_vec(),
                len: self.value.numel(),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value.data();
        let mut out = vec![0.0f32; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &x[plane * h * w..];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    dst[oy * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        finish("avg_pool2", &[self], value, |_| Op::AvgPool2 {
            a: self.node.unwrap_or(0),
            in_shape: [n, c, h, w],
        })
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&self) -> Result<Var<'t>, TensorError> {
        let [n, c, h, w] = dims4("upsample2", self.shape())?;
        let (ho, wo) = (2 * h, 2 * w);
        let x = self.value.data();
        let mut out = vec![0.0f32; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    dst[oy * wo + ox] = src[(oy / 2) * w + ox / 2];
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        finish("upsample2", &[self], value, |_| Op::Upsample2 {
            a: self.node.unwrap_or(0),
            in_shape: [n, c, h, w],
        })
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self) -> Result<Var<'t>, TensorError> {
        let data: Vec<f32> = self
            .value
            .data()
            .iter()
            .map(|&x| x * sigmoid(x))
            .collect();
        let value = Tensor::from_parts(self.shape().to_vec(), data);
        finish("silu", &[self], value, |_| Op::Silu {
            a: self.node.unwrap_or(0),
            av: self.value.clone(),
        })
    }

    /// Normalizes each `(sample, channel)` plane over its spatial extent,
    /// then applies a per-channel affine map.
    pub fn channel_norm(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        eps: f32,
    ) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if shape.len() < 3 {
            return Err(mismatch("channel_norm", shape, &[0, 0, 0]));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(mismatch("channel_norm", shape, gamma.shape()));
        }
        let x = self.value.data();
        let (g, bt) = (gamma.value.data(), beta.value.data());
        let mut xhat = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f32; n * c];
        let mut out = vec![0.0f32; x.len()];
        for plane in 0..n * c {
            let ch = plane % c;
            let src = &x[plane * spatial..(plane + 1) * spatial];
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64;
            let var = src
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / spatial as f64;
            let is = (1.0 / math::sqrt(var + eps as f64)) as f32;
            inv_std[plane] = is;
            for i in 0..spatial {
                let xh = (src[i] as f64 - mean) as f32 * is;
                xhat[plane * spatial + i] = xh;
                out[plane * spatial + i] = g[ch] * xh + bt[ch];
            }
        }
        let value = Tensor::from_parts(shape.to_vec(), out);
        finish("channel_norm", &[self, gamma, beta], value, |_| Op::ChannelNorm {
            x: self.node,
            gamma: gamma.node,
            beta: beta.node,
            gv: gamma.value.clone(),
            xhat,
            inv_std,
            dims: (n, c, spatial),
        })
    }

    /// Adds a per-channel vector to `[N, C, ...]`. The vector is either `[C]`
    /// (shared over the batch) or `[N, C]` (one row per sample).
    pub fn add_channel(&self, v: &Var<'t>) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(mismatch("add_channel", shape, v.shape()));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        let per_sample = match v.shape() {
            [vc] if *vc == c => false,
            [vn, vc] if *vn == n && *vc == c => true,
            _ => return Err(mismatch("add_channel", shape, v.shape())),
        };
        let vd = v.value.data();
        let mut out = self.value.data().to_vec();
        for plane in 0..n * c {
            let add = if per_sample { vd[plane] } else { vd[plane % c] };
            for o in &mut out[plane * spatial..(plane + 1) * spatial] {
                *o += add;
            }
        }
        let value = Tensor::from_parts(shape.to_vec(), out);
        finish("add_channel", &[self, v], value, |_| Op::AddChannel {
            x: self.node,
            v: v.node,
            dims: (n, c, spatial),
            per_sample,
        })
    }

    /// `[M, K] × [K, N]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(mismatch("matmul", self.shape(), other.shape())),
        };
        let mut out = vec![0.0f32; m * n];
        sgemm(m, k, n, self.value.data(), false, other.value.data(), false, &mut out, false);
        let value = Tensor::from_parts(vec![m, n], out);
        finish("matmul", &[self, other], value, |_| Op::Matmul {
            a: self.node,
            b: other.node,
            av: self.value.clone(),
            bv: other.value.clone(),
            mkn: (m, k, n),
        })
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + math::expf(-x))
}

fn conv_out_hw(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    p: Conv2dParams,
) -> Result<(usize, usize), TensorError> {
    let extent = |len: usize, k: usize| {
        let padded = len + 2 * p.padding;
        if p.stride == 0 || k > padded || !(padded - k).is_multiple_of(p.stride) {
            Err(TensorError::NonIntegralExtent {
                extent: len,
                kernel: k,
                padding: p.padding,
                stride: p.stride,
            })
        } else {
            Ok((padded - k) / p.stride + 1)
        }
    };
    Ok((extent(h, kh)?, extent(w, kw)?))
}

fn im2col(
    x: &[f32],
    [c, h, w]: [usize; 3],
    kh: usize,
    kw: usize,
    p: Conv2dParams,
    (ho, wo): (usize, usize),
    cols: &mut [f32],
) {
    let hw = ho * wo;
    for ch in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((ch * kh + i) * kw + j) * hw..][..hw];
                for oy in 0..ho {
                    let y = (oy * p.stride + i) as isize - p.padding as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if y < 0 || y >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(ch * h + y as usize) * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let xx = (ox * p.stride + j) as isize - p.padding as isize;
                        *d = if xx < 0 || xx >= w as isize {
                            0.0
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(
    cols: &[f32],
    [c, h, w]: [usize; 3],
    kh: usize,
    kw: usize,
    p: Conv2dParams,
    (ho, wo): (usize, usize),
    gx: &mut [f32],
) {
    let hw = ho * wo;
    for ch in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((ch * kh + i) * kw + j) * hw..][..hw];
                for oy in 0..ho {
                    let y = (oy * p.stride + i) as isize - p.padding as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut gx[(ch * h + y as usize) * w..][..w];
                    for ox in 0..wo {
                        let xx = (ox * p.stride + j) as isize - p.padding as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(input_index, output_index)` for every input element, where the
/// output index drops the coordinates along reduced axes.
fn for_each_reduced_index(shape: &[usize], reduced: &[bool], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let mut ostride = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        if !reduced[d] {
            ostride[d] = acc;
            acc *= shape[d];
        }
    }
    let total: usize = shape.iter().product();
    let mut coord = vec![0usize; rank];
    let mut o = 0usize;
    for i in 0..total {
        f(i, o);
        for d in (0..rank).rev() {
            coord[d] += 1;
            o += ostride[d];
            if coord[d] < shape[d] {
                break;
            }
            o -= ostride[d] * shape[d];
            coord[d] = 0;
        }
    }
}

impl Op {
    pub(crate) fn backward(&self, g: &[f32], sink: &mut GradSink<'_>) {
        match self {
            Op::Leaf => {}
            Op::Binary {
                kind,
                a,
                b,
                av,
                bv,
                out,
            } => {
                let (x, y) = (av.data(), bv.data());
                if let Some(a) = *a {
                    let ga = sink.slot(a);
                    for i in 0..g.len() {
                        ga[i] += match kind {
                            BinaryOp::Add | BinaryOp::Sub => g[i],
                            BinaryOp::Mul => g[i] * y[i],
                            BinaryOp::Div => g[i] / y[i],
                            BinaryOp::Pow => g[i] * y[i] * out.data()[i] / x[i],
                        };
                    }
                }
                if let Some(b) = *b {
                    let gb = sink.slot(b);
                    for i in 0..g.len() {
                        gb[i] += match kind {
                            BinaryOp::Add => g[i],
                            BinaryOp::Sub => -g[i],
                            BinaryOp::Mul => g[i] * x[i],
                            BinaryOp::Div => -g[i] * x[i] / (y[i] * y[i]),
                            BinaryOp::Pow => g[i] * out.data()[i] * math::ln(x[i] as f64) as f32,
                        };
                    }
                }
            }
            Op::Scalar { kind, a, av, s } => {
                let x = av.data();
                let ga = sink.slot(*a);
                for i in 0..g.len() {
                    ga[i] += match kind {
                        BinaryOp::Add | BinaryOp::Sub => g[i],
                        BinaryOp::Mul => g[i] * s,
                        BinaryOp::Div => g[i] / s,
                        BinaryOp::Pow if *s == 2.0 => 2.0 * g[i] * x[i],
                        BinaryOp::Pow => g[i] * s * math::powf(x[i], s - 1.0),
                    };
                }
            }
            Op::Reduce {
                kind,
                a,
                in_shape,
                reduced,
                count,
            } => {
                let scale = match kind {
                    ReduceOp::Sum => 1.0,
                    ReduceOp::Mean => 1.0 / *count as f32,
                };
                let ga = sink.slot(*a);
                for_each_reduced_index(in_shape, reduced, |i, o| ga[i] += g[o] * scale);
            }
            Op::Conv2d {
                x,
                k,
                xv,
                kv,
                params,
                out_hw,
            } => {
                let [n, c, h, w] = dims4("conv2d", xv.shape()).expect("checked in forward");
                let [f, _, kh, kw] = dims4("conv2d", kv.shape()).expect("checked in forward");
                let (ho, wo) = *out_hw;
                let hw = ho * wo;
                let ckk = c * kh * kw;
                let mut cols = vec![0.0f32; ckk * hw];
                if let Some(k) = *k {
                    let gk = sink.slot(k);
                    for b in 0..n {
                        im2col(&xv.data()[b * c * h * w..][..c * h * w], [c, h, w], kh, kw, *params, *out_hw, &mut cols);
                        sgemm(f, hw, ckk, &g[b * f * hw..][..f * hw], false, &cols, true, gk, true);
                    }
                }
                if let Some(x) = *x {
                    let gx = sink.slot(x);
                    for b in 0..n {
                        sgemm(ckk, f, hw, kv.data(), true, &g[b * f * hw..][..f * hw], false, &mut cols, false);
                        col2im(&cols, [c, h, w], kh, kw, *params, *out_hw, &mut gx[b * c * h * w..][..c * h * w]);
                    }
                }
            }
            Op::Reshape { a } => {
                for (d, s) in sink.slot(*a).iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(node, extent) in parts {
                    if let Some(node) = node {
                        let gp = sink.slot(node);
                        let chunk = extent * inner;
                        for o in 0..*outer {
                            let src = &g[o * total * inner + offset * inner..][..chunk];
                            for (d, s) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += extent;
                }
            }
            Op::AvgPool2 { a, in_shape } => {
                let [n, c, h, w] = *in_shape;
                let (ho, wo) = (h / 2, w / 2);
                let ga = sink.slot(*a);
                for plane in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = 0.25 * g[plane * ho * wo + oy * wo + ox];
                            let i = plane * h * w + 2 * oy * w + 2 * ox;
                            ga[i] += v;
                            ga[i + 1] += v;
                            ga[i + w] += v;
                            ga[i + w + 1] += v;
                        }
                    }
                }
            }
            Op::Upsample2 { a, in_shape } => {
                let [n, c, h, w] = *in_shape;
                let (ho, wo) = (2 * h, 2 * w);
                let ga = sink.slot(*a);
                for plane in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            ga[plane * h * w + (oy / 2) * w + ox / 2] += g[plane * ho * wo + oy * wo + ox];
                        }
                    }
                }
            }
            Op::Silu { a, av } => {
                let ga = sink.slot(*a);
                for (i, &x) in av.data().iter().enumerate() {
                    let s = sigmoid(x);
                    ga[i] += g[i] * s * (1.0 + x * (1.0 - s));
                }
            }
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                gv,
                xhat,
                inv_std,
                dims: (n, c, spatial),
            } => {
                let (n, c, spatial) = (*n, *c, *spatial);
                if let Some(beta) = *beta {
                    let gb = sink.slot(beta);
                    for plane in 0..n * c {
                        gb[plane % c] += g[plane * spatial..][..spatial].iter().sum::<f32>();
                    }
                }
                if let Some(gamma) = *gamma {
                    let gg = sink.slot(gamma);
                    for plane in 0..n * c {
                        let s: f32 = g[plane * spatial..][..spatial]
                            .iter()
                            .zip(&xhat[plane * spatial..][..spatial])
                            .map(|(a, b)| a * b)
                            .sum();
                        gg[plane % c] += s;
                    }
                }
                if let Some(x) = *x {
                    let gx = sink.slot(x);
                    let gd = gv.data();
                    for plane in 0..n * c {
                        let gamma = gd[plane % c];
                        let gs = &g[plane * spatial..][..spatial];
                        let xs = &xhat[plane * spatial..][..spatial];
                        let mut sum = 0.0f64;
                        let mut sum_x = 0.0f64;
                        for (dy, xh) in gs.iter().zip(xs) {
                            let d = (dy * gamma) as f64;
                            sum += d;
                            sum_x += d * *xh as f64;
                        }
                        let m = spatial as f64;
                        let is = inv_std[plane] as f64;
                        for i in 0..spatial {
                            let d = (gs[i] * gamma) as f64;
                            gx[plane * spatial + i] +=
                                (is / m * (m * d - sum - xs[i] as f64 * sum_x)) as f32;
                        }
                    }
                }
            }
            Op::AddChannel {
                x,
                v,
                dims: (n, c, spatial),
                per_sample,
            } => {
                if let Some(x) = *x {
                    for (d, s) in sink.slot(x).iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if let Some(v) = *v {
                    let gv = sink.slot(v);
                    for plane in 0..n * c {
                        let s: f32 = g[plane * spatial..][..*spatial].iter().sum();
                        let idx = if *per_sample { plane } else { plane % c };
                        gv[idx] += s;
                    }
                }
            }
            Op::Matmul { a, b, av, bv, mkn } => {
                let (m, k, n) = *mkn;
                if let Some(a) = *a {
                    sgemm(m, n, k, g, false, bv.data(), true, sink.slot(a), true);
                }
                if let Some(b) = *b {
                    sgemm(k, m, n, av.data(), true, g, false, sink.slot(b), true);
                }
            }
        }
    }
}
