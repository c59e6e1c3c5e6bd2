//! Finite-difference gradient checks of the `f32` autodiff against the
//! double-precision reference in `reference.rs`.

#![allow(dead_code)]

use std::collections::BTreeMap;

use led_core::nn::{ModelConfig, NoiseEstimator};
use led_core::rng::stream;
use led_core::tensor::{Conv2dParams, ReduceOp, Tape, Tensor, Var};
use rand::Rng;

use super::reference::{self as r, T64};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
/// Denominator floor so that vanishing gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Sample {
    pub fn err(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

pub fn worst(samples: &[Sample]) -> Option<&Sample> {
    samples.iter().max_by(|a, b| a.err().total_cmp(&b.err()))
}

type F32Op = dyn for<'t> Fn(&[Var<'t>]) -> Var<'t>;
type F64Op = dyn Fn(&[T64]) -> T64;

fn to64(t: &Tensor) -> T64 {
    T64::from_f32(t.shape(), t.data())
}

fn weighted(out: &T64, w: &[f32]) -> f64 {
    out.data.iter().zip(w).map(|(a, &b)| a * b as f64).sum()
}

/// Compares `d/dx Σ w·op(x)` from the tape with central differences of the
/// reference at `probes` random coordinates of every input.
fn check_op(
    label: &str,
    inputs: Vec<Tensor>,
    op: &F32Op,
    reference: &F64Op,
    probes: usize,
    rng: &mut impl Rng,
) -> Vec<Sample> {
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&leaves);
    let w = Tensor::uniform(out.shape().to_vec(), -1.0, 1.0, rng);
    let loss = out.mul(&Var::constant(w.clone())).unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();

    let base: Vec<T64> = inputs.iter().map(to64).collect();
    let mut samples = Vec::new();
    for (i, leaf) in leaves.iter().enumerate() {
        let g = grads.get(leaf).unwrap();
        for _ in 0..probes {
            let k = rng.random_range(0..inputs[i].numel());
            let eval = |delta: f64| {
                let mut xs = base.clone();
                xs[i].data[k] += delta;
                weighted(&reference(&xs), w.data())
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            samples.push(Sample {
                label: format!("{label}[input {i}, element {k}]"),
                analytic: g.data()[k] as f64,
                numeric,
            });
        }
    }
    samples
}

fn dims(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn positive(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, 0.5, 2.0, rng)
}

fn signed_away_from_zero(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let t = positive(shape, rng);
    let signs: Vec<f32> = t.data().iter().map(|&v| if rng.random_bool(0.5) { v } else { -v }).collect();
    Tensor::new(t.shape().to_vec(), signs).unwrap()
}

fn randn(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    Tensor::randn(shape, rng)
}

fn elementwise(a: &T64, b: &T64, f: impl Fn(f64, f64) -> f64) -> T64 {
    T64::new(&a.shape, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

fn map(a: &T64, f: impl Fn(f64) -> f64) -> T64 {
    T64::new(&a.shape, a.data.iter().map(|&x| f(x)).collect())
}

pub const OP_KINDS: usize = 16;

/// One randomized trial of op kind `trial % OP_KINDS`.
pub fn op_trial(trial: usize, seed: u64) -> Vec<Sample> {
    let mut rng = stream(seed, trial as u64);
    let rng = &mut rng;
    let probes = 4;
    let kind = trial % OP_KINDS;
    let shape = vec![dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 2, 5)];
    match kind {
        0 => check_op(
            "add",
            vec![randn(shape.clone(), rng), randn(shape, rng)],
            &|v| v[0].add(&v[1]).unwrap(),
            &|x| elementwise(&x[0], &x[1], |a, b| a + b),
            probes,
            rng,
        ),
        1 => check_op(
            "sub",
            vec![randn(shape.clone(), rng), randn(shape, rng)],
            &|v| v[0].sub(&v[1]).unwrap(),
            &|x| elementwise(&x[0], &x[1], |a, b| a - b),
            probes,
            rng,
        ),
        2 => check_op(
            "mul",
            vec![randn(shape.clone(), rng), randn(shape, rng)],
            &|v| v[0].mul(&v[1]).unwrap(),
            &|x| elementwise(&x[0], &x[1], |a, b| a * b),
            probes,
            rng,
        ),
        3 => check_op(
            "div",
            vec![randn(shape.clone(), rng), signed_away_from_zero(shape, rng)],
            &|v| v[0].div(&v[1]).unwrap(),
            &|x| elementwise(&x[0], &x[1], |a, b| a / b),
            probes,
            rng,
        ),
        4 => check_op(
            "pow",
            vec![positive(shape.clone(), rng), Tensor::uniform(shape, -1.5, 2.5, rng)],
            &|v| v[0].pow(&v[1]).unwrap(),
            &|x| elementwise(&x[0], &x[1], f64::powf),
            probes,
            rng,
        ),
        5 => {
            let (a, m) = (rng.random_range(-2.0f32..2.0), rng.random_range(-2.0f32..2.0));
            let p = rng.random_range(-1.5f32..3.0);
            check_op(
                "scalar ops",
                vec![positive(shape, rng)],
                &move |v| {
                    v[0].add_scalar(a)
                        .unwrap()
                        .mul_scalar(m)
                        .unwrap()
                        .add(&v[0].pow_scalar(p).unwrap().div_scalar(1.5).unwrap())
                        .unwrap()
                },
                &move |x| {
                    let l = map(&x[0], |t| (t + a as f64) * m as f64);
                    let rr = map(&x[0], |t| t.powf(p as f64) / 1.5);
                    elementwise(&l, &rr, |u, w| u + w)
                },
                probes,
                rng,
            )
        }
        6 | 7 => {
            let axis = rng.random_range(0..3);
            let keep = rng.random_bool(0.5);
            let op = if kind == 6 { ReduceOp::Sum } else { ReduceOp::Mean };
            let s = shape.clone();
            check_op(
                "reduce",
                vec![randn(shape, rng)],
                &move |v| v[0].reduce(op, &[axis], keep).unwrap(),
                &move |x| reduce64(&x[0], &s, axis, op == ReduceOp::Mean),
                probes,
                rng,
            )
        }
        8 => {
            let stride = rng.random_range(1..=2);
            let padding = rng.random_range(0..=1);
            let k = if stride == 2 { 1 + 2 * rng.random_range(0..=1) } else { rng.random_range(1..=3) };
            // Extent chosen so that (h + 2p - k) is a multiple of the stride.
            let h = k + stride * dims(rng, 1, 3) - 2 * padding;
            let w = k + stride * dims(rng, 1, 3) - 2 * padding;
            let (cin, cout) = (dims(rng, 1, 3), dims(rng, 1, 3));
            let n = dims(rng, 1, 2);
            check_op(
                "conv2d",
                vec![randn(vec![n, cin, h, w], rng), randn(vec![cout, cin, k, k], rng)],
                &move |v| v[0].conv2d(&v[1], Conv2dParams { stride, padding }).unwrap(),
                &move |x| r::conv2d(&x[0], &x[1], stride, padding),
                probes,
                rng,
            )
        }
        9 => {
            let (n, c) = (dims(rng, 1, 2), dims(rng, 1, 3));
            let (ca, h, w) = (dims(rng, 1, 3), 2 * dims(rng, 1, 3), 2 * dims(rng, 1, 3));
            check_op(
                "concat+pool+upsample",
                vec![randn(vec![n, c, h, w], rng), randn(vec![n, ca, h, w], rng)],
                &|v| {
                    Var::concat(&[&v[0], &v[1]], 1)
                        .unwrap()
                        .avg_pool2()
                        .unwrap()
                        .upsample2()
                        .unwrap()
                },
                &|x| r::upsample2(&r::avg_pool2(&r::concat_channels(&x[0], &x[1]))),
                probes,
                rng,
            )
        }
        10 => check_op(
            "silu",
            vec![Tensor::uniform(shape, -4.0, 4.0, rng)],
            &|v| v[0].silu().unwrap(),
            &|x| r::silu(&x[0]),
            probes,
            rng,
        ),
        11 => {
            let (n, c, h, w) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 2, 4), dims(rng, 2, 4));
            check_op(
                "channel_norm",
                vec![randn(vec![n, c, h, w], rng), randn(vec![c], rng), randn(vec![c], rng)],
                &|v| v[0].channel_norm(&v[1], &v[2], 1e-5).unwrap(),
                &|x| r::channel_norm(&x[0], &x[1], &x[2], 1e-5),
                probes,
                rng,
            )
        }
        12 => {
            let (n, c, h, w) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3));
            let per_sample = rng.random_bool(0.5);
            let vshape = if per_sample { vec![n, c] } else { vec![c] };
            check_op(
                "add_channel",
                vec![randn(vec![n, c, h, w], rng), randn(vshape, rng)],
                &|v| v[0].add_channel(&v[1]).unwrap(),
                &|x| r::add_channel(&x[0], &x[1]),
                probes,
                rng,
            )
        }
        13 => {
            let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
            check_op(
                "matmul",
                vec![randn(vec![m, k], rng), randn(vec![k, n], rng)],
                &|v| v[0].matmul(&v[1]).unwrap(),
                &|x| r::matmul(&x[0], &x[1]),
                probes,
                rng,
            )
        }
        14 => {
            let s = shape.clone();
            let flat: usize = s.iter().product();
            check_op(
                "reshape",
                vec![randn(shape, rng)],
                &move |v| v[0].reshape(vec![flat]).unwrap().mul(&v[0].reshape(vec![flat]).unwrap()).unwrap(),
                &move |x| T64::new(&[flat], x[0].data.iter().map(|a| a * a).collect()),
                probes,
                rng,
            )
        }
        _ => check_op(
            "mean_all of squares",
            vec![randn(shape, rng)],
            &|v| v[0].mul(&v[0]).unwrap().mean_all().unwrap(),
            &|x| {
                let n = x[0].data.len() as f64;
                T64::new(&[1], vec![x[0].data.iter().map(|a| a * a).sum::<f64>() / n])
            },
            probes,
            rng,
        ),
    }
}

fn reduce64(x: &T64, shape: &[usize], axis: usize, mean: bool) -> T64 {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                out[o * inner + i] += x.data[(o * n + k) * inner + i];
            }
        }
    }
    if mean {
        out.iter_mut().for_each(|v| *v /= n as f64);
    }
    let len = out.len();
    T64::new(&[len], out)
}

/// Full noise-estimator check: gradients of the noise-prediction MSE with
/// respect to `count` randomly chosen scalar parameters. The zero-initialized
/// output convolution is re-randomized so that every parameter is live.
pub fn full_model_check(count: usize, seed: u64) -> Vec<Sample> {
    let cfg = ModelConfig {
        image_channels: 1,
        depth: 2,
        base_channels: 4,
        time_dim: 8,
    };
    let mut rng = stream(seed, 0);
    let mut model = NoiseEstimator::new(cfg.clone(), &mut rng).unwrap();
    let out_w = model.params().get("out.weight").unwrap().shape().to_vec();
    model
        .params_mut()
        .set("out.weight", Tensor::uniform(out_w, -0.3, 0.3, &mut rng))
        .unwrap();
    model
        .params_mut()
        .set("out.bias", Tensor::uniform([1], -0.1, 0.1, &mut rng))
        .unwrap();

    let shape = [2, 1, 8, 8];
    let noisy = Tensor::randn(shape, &mut rng);
    let cond = Tensor::uniform(shape, -1.0, 1.0, &mut rng);
    let eps = Tensor::randn(shape, &mut rng);
    let t = [rng.random_range(1..200), rng.random_range(1..200)];

    let tape = Tape::new();
    let (bound, pred) = model.forward_on(&tape, &noisy, &t, &cond).unwrap();
    let d = pred.sub(&Var::constant(eps.clone())).unwrap();
    let loss = d.mul(&d).unwrap().mean_all().unwrap();
    let grads = tape.backward(&loss).unwrap();

    let names: Vec<(String, Tensor)> = model.params().to_named();
    let mut reference = r::RefModel {
        depth: cfg.depth,
        time_dim: cfg.time_dim,
        params: names.iter().map(|(n, v)| (n.clone(), to64(v))).collect::<BTreeMap<_, _>>(),
    };
    let (noisy64, cond64, eps64) = (to64(&noisy), to64(&cond), to64(&eps));

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let pi = rng.random_range(0..names.len());
        let (name, value) = &names[pi];
        let k = rng.random_range(0..value.numel());
        let analytic = grads.get(bound.var(pi)).unwrap().data()[k] as f64;
        let original = reference.params[name].data[k];
        let mut eval = |delta: f64| {
            reference.params.get_mut(name).unwrap().data[k] = original + delta;
            reference.loss(&noisy64, &t, &cond64, &eps64)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        reference.params.get_mut(name).unwrap().data[k] = original;
        samples.push(Sample {
            label: format!("{name}[{k}]"),
            analytic,
            numeric,
        });
    }
    samples
}

/// Sanity check that the reference forward matches the model forward.
pub fn reference_forward_gap(seed: u64) -> f64 {
    let cfg = ModelConfig {
        image_channels: 1,
        depth: 2,
        base_channels: 4,
        time_dim: 8,
    };
    let mut rng = stream(seed, 1);
    let mut model = NoiseEstimator::new(cfg.clone(), &mut rng).unwrap();
    let out_w = model.params().get("out.weight").unwrap().shape().to_vec();
    model
        .params_mut()
        .set("out.weight", Tensor::uniform(out_w, -0.3, 0.3, &mut rng))
        .unwrap();
    let x = Tensor::randn([1, 1, 8, 8], &mut rng);
    let c = Tensor::randn([1, 1, 8, 8], &mut rng);
    let y = model.predict(&x, &[17], &c).unwrap();
    let reference = r::RefModel {
        depth: cfg.depth,
        time_dim: cfg.time_dim,
        params: model.params().to_named().iter().map(|(n, v)| (n.clone(), to64(v))).collect(),
    };
    let y64 = reference.forward(&to64(&x), &[17], &to64(&c));
    y.data()
        .iter()
        .zip(&y64.data)
        .map(|(&a, b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}
