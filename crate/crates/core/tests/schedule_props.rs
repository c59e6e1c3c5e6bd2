mod support;

use led_core::schedule::{NoiseSchedule, ScheduleConfig, ScheduleKind};
use led_core::tensor::Tensor;
use proptest::prelude::*;
use support::oracle::forward_moments;

fn schedules() -> impl Strategy<Value = NoiseSchedule> {
    prop_oneof![
        (1usize..400, 1e-5f64..1e-3, 1e-3f64..0.02).prop_map(|(steps, s, e)| {
            ScheduleConfig { kind: ScheduleKind::Linear, steps, beta_start: s, beta_end: e }.build().unwrap()
        }),
        (1usize..400).prop_map(|steps| NoiseSchedule::cosine(steps).unwrap()),
        prop::collection::vec(1e-4f64..0.9, 1..50).prop_map(|b| NoiseSchedule::from_betas(b).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_step_and_marginal_variances_agree(s in schedules()) {
        prop_assert_eq!(s.posterior_variance(1), 0.0);
        for t in 1..=s.steps() {
            let lhs = (1.0 - s.beta(t)) * (1.0 - s.alpha(t - 1)) + s.beta(t);
            prop_assert!((lhs - (1.0 - s.alpha(t))).abs() <= 1e-6, "t={t}");
        }
    }

    #[test]
    fn alpha_is_monotone(s in schedules()) {
        prop_assert_eq!(s.alpha(0), 1.0);
        for t in 1..=s.steps() {
            prop_assert!(s.alpha(t) < s.alpha(t - 1));
            prop_assert!(s.alpha(t) > 0.0);
        }
    }

    #[test]
    fn q_sample_is_linear(
        x in prop::collection::vec(-1.0f32..1.0, 8),
        e in prop::collection::vec(-3.0f32..3.0, 8),
        a in -4.0f32..4.0,
        t in 1usize..=200,
    ) {
        let s = ScheduleConfig::default().build().unwrap();
        let shape = [2, 1, 2, 2];
        let scale = |v: &[f32]| Tensor::new(shape, v.iter().map(|&v| a * v).collect()).unwrap();
        let lhs = s.q_sample(&scale(&x), &[t, t], &scale(&e)).unwrap();
        let base = s.q_sample(&Tensor::new(shape, x).unwrap(), &[t, t], &Tensor::new(shape, e).unwrap()).unwrap();
        for (&l, &b) in lhs.data().iter().zip(base.data()) {
            prop_assert!((l - a * b).abs() <= 1e-5 * (a * b).abs().max(1.0));
        }
    }
}

#[test]
fn two_step_fixture_is_exact() {
    let s = NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap();
    assert_eq!((s.alpha(1), s.alpha(2)), (0.5, 0.25));
    assert_eq!(s.posterior_variance(1), 0.0);
    assert_eq!(s.posterior_variance(2), 1.0 / 3.0);
}

#[test]
fn iterated_chain_matches_marginal_moments() {
    let s = ScheduleConfig::default().build().unwrap();
    for t in [1, 100, 200] {
        let m = forward_moments(&s, 0.7, t, 10_000, 11);
        assert!(m.passes(3.0), "{m:?}");
    }
}
