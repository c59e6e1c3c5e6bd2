//! Naive double-precision reimplementations of the tensor ops and the
//! noise-estimator forward pass, used as finite-difference oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }

    fn dims4(&self) -> (usize, usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cc, h, w) = self.dims4();
        self.data[((n * cc + c) * h + y) * w + x]
    }
}

pub fn conv2d(x: &T64, k: &T64, stride: usize, pad: usize) -> T64 {
    let (n, cin, h, w) = x.dims4();
    let (cout, kc, kh, kw) = k.dims4();
    assert_eq!(cin, kc);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = 0.0;
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x.at(b, c, iy as usize, ix as usize) * k.at(o, c, i, j);
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    T64::new(&[n, cout, oh, ow], out)
}

/// Adds `v[c]` (shape `[C]`) or `v[n, c]` (shape `[N, C]`) to every
/// position of channel `c`.
pub fn add_channel(x: &T64, v: &T64) -> T64 {
    let (n, c) = (x.shape[0], x.shape[1]);
    let spatial: usize = x.shape[2..].iter().product();
    let mut out = x.data.clone();
    for b in 0..n {
        for ch in 0..c {
            let add = if v.shape.len() == 1 { v.data[ch] } else { v.data[b * c + ch] };
            for i in 0..spatial {
                out[(b * c + ch) * spatial + i] += add;
            }
        }
    }
    T64::new(&x.shape, out)
}

pub fn channel_norm(x: &T64, gamma: &T64, beta: &T64, eps: f64) -> T64 {
    let (n, c) = (x.shape[0], x.shape[1]);
    let spatial: usize = x.shape[2..].iter().product();
    let mut out = vec![0.0; x.data.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * spatial;
            let src = &x.data[base..base + spatial];
            let mean = src.iter().sum::<f64>() / spatial as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / spatial as f64;
            for i in 0..spatial {
                out[base + i] = gamma.data[ch] * (src[i] - mean) / (var + eps).sqrt() + beta.data[ch];
            }
        }
    }
    T64::new(&x.shape, out)
}

pub fn silu(x: &T64) -> T64 {
    T64::new(&x.shape, x.data.iter().map(|&v| v / (1.0 + (-v).exp())).collect())
}

pub fn avg_pool2(x: &T64) -> T64 {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let s = x.at(b, ch, 2 * y, 2 * xx)
                        + x.at(b, ch, 2 * y, 2 * xx + 1)
                        + x.at(b, ch, 2 * y + 1, 2 * xx)
                        + x.at(b, ch, 2 * y + 1, 2 * xx + 1);
                    out.push(s / 4.0);
                }
            }
        }
    }
    T64::new(&[n, c, oh, ow], out)
}

pub fn upsample2(x: &T64) -> T64 {
    let (n, c, h, w) = x.dims4();
    let mut out = Vec::with_capacity(n * c * h * w * 4);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out.push(x.at(b, ch, y / 2, xx / 2));
                }
            }
        }
    }
    T64::new(&[n, c, 2 * h, 2 * w], out)
}

pub fn concat_channels(a: &T64, b: &T64) -> T64 {
    let (n, ca, h, w) = a.dims4();
    let cb = b.shape[1];
    let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        out.extend_from_slice(&a.data[i * ca * h * w..(i + 1) * ca * h * w]);
        out.extend_from_slice(&b.data[i * cb * h * w..(i + 1) * cb * h * w]);
    }
    T64::new(&[n, ca + cb, h, w], out)
}

pub fn matmul(a: &T64, b: &T64) -> T64 {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    assert_eq!(k, b.shape[0]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a.data[i * k + p] * b.data[p * n + j]).sum();
        }
    }
    T64::new(&[m, n], out)
}

/// Sinusoidal embedding rounded through `f32`, as the model sees it.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let angles: Vec<f64> = (0..half)
        .map(|i| t as f64 / 10_000f64.powf(2.0 * i as f64 / dim as f64))
        .collect();
    angles
        .iter()
        .map(|a| a.sin() as f32 as f64)
        .chain(angles.iter().map(|a| a.cos() as f32 as f64))
        .collect()
}

pub struct RefModel {
    pub depth: usize,
    pub time_dim: usize,
    pub params: BTreeMap<String, T64>,
}

impl RefModel {
    fn p(&self, name: &str) -> &T64 {
        self.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn linear(&self, x: &T64, name: &str) -> T64 {
        add_channel(&matmul(x, self.p(&format!("{name}.weight"))), self.p(&format!("{name}.bias")))
    }

    fn conv(&self, x: &T64, name: &str) -> T64 {
        let y = conv2d(x, self.p(&format!("{name}.weight")), 1, 1);
        match self.params.get(&format!("{name}.bias")) {
            Some(b) => add_channel(&y, b),
            None => y,
        }
    }

    fn norm(&self, x: &T64, name: &str) -> T64 {
        channel_norm(x, self.p(&format!("{name}.gamma")), self.p(&format!("{name}.beta")), 1e-5)
    }

    fn block(&self, x: &T64, name: &str, temb: &T64) -> T64 {
        let h = self.norm(&self.conv(x, &format!("{name}.conv1")), &format!("{name}.norm1"));
        let h = silu(&add_channel(&h, &self.linear(temb, &format!("{name}.time"))));
        silu(&self.norm(&self.conv(&h, &format!("{name}.conv2")), &format!("{name}.norm2")))
    }

    pub fn forward(&self, noisy: &T64, t: &[usize], cond: &T64) -> T64 {
        let emb: Vec<f64> = t.iter().flat_map(|&s| time_embedding(s, self.time_dim)).collect();
        let emb = T64::new(&[t.len(), self.time_dim], emb);
        let temb = silu(&self.linear(&emb, "time_mlp"));
        let mut h = concat_channels(noisy, cond);
        let mut skips = Vec::new();
        for level in 0..self.depth {
            let out = self.block(&h, &format!("down{level}"), &temb);
            h = avg_pool2(&out);
            skips.push(out);
        }
        h = self.block(&h, "mid", &temb);
        for level in (0..self.depth).rev() {
            let skip = skips.pop().unwrap();
            h = self.block(&concat_channels(&upsample2(&h), &skip), &format!("up{level}"), &temb);
        }
        self.conv(&h, "out")
    }

    /// `mean((forward − eps)²)`.
    pub fn loss(&self, noisy: &T64, t: &[usize], cond: &T64, eps: &T64) -> f64 {
        let out = self.forward(noisy, t, cond);
        out.data
            .iter()
            .zip(&eps.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / out.data.len() as f64
    }
}
