use led_core::tensor::{Conv2dParams, Tape, Tensor, Var};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, n)
}

const SAME: Conv2dParams = Conv2dParams { stride: 1, padding: 1 };

fn loss_a<'t>(x: &Var<'t>, k: &Var<'t>) -> Var<'t> {
    x.conv2d(k, SAME).unwrap().silu().unwrap().mean_all().unwrap()
}

fn loss_b<'t>(x: &Var<'t>, k: &Var<'t>) -> Var<'t> {
    let y = x.avg_pool2().unwrap().upsample2().unwrap().mul(x).unwrap();
    y.conv2d(k, SAME).unwrap().pow_scalar(2.0).unwrap().sum_all().unwrap()
}

fn loss_c<'t>(x: &Var<'t>, k: &Var<'t>) -> Var<'t> {
    let h = x.conv2d(k, SAME).unwrap();
    let g = Var::constant(Tensor::full([2], 1.0));
    let beta = Var::constant(Tensor::zeros([2]));
    let n = h.channel_norm(&g, &beta, 1e-5).unwrap();
    n.silu().unwrap().mul(x).unwrap().mean_all().unwrap().add(&loss_b(x, k)).unwrap()
}

/// Gradients of `f(x, k)` with respect to both leaves.
fn grads(x: &Tensor, k: &Tensor, f: impl for<'t> Fn(&Var<'t>, &Var<'t>) -> Var<'t>) -> (Tensor, Tensor, f32) {
    let tape = Tape::new();
    let (xv, kv) = (tape.leaf(x.clone()), tape.leaf(k.clone()));
    let loss = f(&xv, &kv);
    let g = tape.backward(&loss).unwrap();
    (g.get(&xv).unwrap(), g.get(&kv).unwrap(), loss.value().item().unwrap())
}

fn close(got: &Tensor, want: &[f32], tol: f32) -> bool {
    got.data()
        .iter()
        .zip(want)
        .all(|(&g, &w)| (g - w).abs() <= tol * w.abs().max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_is_linear_in_the_loss(xs in values(2 * 4 * 4), ks in values(2 * 2 * 9), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let x = tensor(&[1, 2, 4, 4], xs);
        let k = tensor(&[2, 2, 3, 3], ks);
        let (gxa, gka, _) = grads(&x, &k, loss_a);
        let (gxb, gkb, _) = grads(&x, &k, loss_b);
        let (gx, gk, _) = grads(&x, &k, |x, k| {
            loss_a(x, k).mul_scalar(a).unwrap().add(&loss_b(x, k).mul_scalar(b).unwrap()).unwrap()
        });
        let combine = |p: &Tensor, q: &Tensor| -> Vec<f32> {
            p.data().iter().zip(q.data()).map(|(&p, &q)| a * p + b * q).collect()
        };
        prop_assert!(close(&gx, &combine(&gxa, &gxb), 1e-6));
        prop_assert!(close(&gk, &combine(&gka, &gkb), 1e-6));
    }

    #[test]
    fn identity_kernel_conv_is_identity(xs in values(2 * 3 * 4 * 6), size in prop::sample::select(vec![1usize, 3, 5])) {
        let x = tensor(&[2, 3, 4, 6], xs.clone());
        let mut eye = vec![0.0; 3 * 3 * size * size];
        let centre = (size / 2) * size + size / 2;
        for c in 0..3 {
            eye[(c * 3 + c) * size * size + centre] = 1.0;
        }
        let k = Var::constant(tensor(&[3, 3, size, size], eye));
        let p = Conv2dParams { stride: 1, padding: size / 2 };
        let y = Var::constant(x).conv2d(&k, p).unwrap();
        prop_assert_eq!(y.value().data(), &xs[..]);
    }

    #[test]
    fn tape_replay_is_bitwise_deterministic(xs in values(2 * 4 * 4), ks in values(2 * 2 * 9)) {
        let x = tensor(&[1, 2, 4, 4], xs);
        let k = tensor(&[2, 2, 3, 3], ks);
        let first = grads(&x, &k, loss_c);
        let second = grads(&x, &k, loss_c);
        prop_assert_eq!(first.2.to_bits(), second.2.to_bits());
        prop_assert_eq!(first.0.data(), second.0.data());
        prop_assert_eq!(first.1.data(), second.1.data());
    }
}
