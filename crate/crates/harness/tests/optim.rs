use proptest::prelude::*;
use tempdistill_core::autodiff::Tensor;
use tempdistill_harness::config::OptimizerConfig;
use tempdistill_harness::optim::{adamw_step, scheduled_lr, AdamHyper, AdamState};

fn hyper(lr: f64, weight_decay: f64) -> AdamHyper {
    AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
}

#[test]
fn zero_gradient_without_decay_leaves_params_unchanged() {
    let mut p = Tensor::new(vec![3], vec![0.5, -1.25, 2.0]).unwrap();
    let before = p.clone();
    let g = Tensor::zeros(&[3]);
    let mut state = AdamState::new([&p]);
    for _ in 0..5 {
        adamw_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &hyper(1e-2, 0.0)).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn three_steps_match_hand_rolled_reference() {
    let (lr, b1, b2, eps, wd) = (1e-2, 0.9, 0.999, 1e-8, 0.1);
    let grads = [[0.3, -0.7], [0.1, 0.2], [-0.5, 0.05]];
    let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
    let mut state = AdamState::new([&p]);
    let (mut x, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for (t, g) in grads.iter().enumerate() {
        let gt = Tensor::new(vec![2], g.to_vec()).unwrap();
        adamw_step(&mut [&mut p], &[gt], &mut state, &hyper(lr, wd)).unwrap();
        let t = (t + 1) as i32;
        for j in 0..2 {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / (1.0 - b1.powi(t));
            let vh = v[j] / (1.0 - b2.powi(t));
            x[j] = x[j] * (1.0 - lr * wd) - lr * mh / (vh.sqrt() + eps);
        }
    }
    for (got, want) in p.data().iter().zip(x) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn mismatched_slots_are_rejected() {
    let mut p = Tensor::zeros(&[2]);
    let mut state = AdamState::new([&p]);
    let g = Tensor::zeros(&[3]);
    assert!(adamw_step(&mut [&mut p], &[g], &mut state, &hyper(1e-3, 0.0)).is_err());
}

#[test]
fn cosine_schedule_starts_at_base_and_constant_when_disabled() {
    let mut cfg = OptimizerConfig::default();
    assert_eq!(scheduled_lr(&cfg, 0, 100), cfg.lr);
    assert!((scheduled_lr(&cfg, 50, 100) - cfg.lr / 2.0).abs() < 1e-15);
    cfg.cosine = false;
    assert_eq!(scheduled_lr(&cfg, 73, 100), cfg.lr);
}

proptest! {
    #[test]
    fn zero_gradient_scales_params_by_decay(
        values in prop::collection::vec(-10.0f64..10.0, 1..8),
        lr in 1e-5f64..1e-1,
        wd in 0.0f64..1.0,
    ) {
        let n = values.len();
        let mut p = Tensor::new(vec![n], values.clone()).unwrap();
        let mut state = AdamState::new([&p]);
        adamw_step(&mut [&mut p], &[Tensor::zeros(&[n])], &mut state, &hyper(lr, wd)).unwrap();
        for (got, x) in p.data().iter().zip(&values) {
            prop_assert!((got - x * (1.0 - lr * wd)).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn first_step_moves_each_coordinate_by_about_lr(
        g in prop::collection::vec(prop_oneof![-5.0f64..-1e-3, 1e-3f64..5.0], 1..8),
        lr in 1e-5f64..1e-1,
    ) {
        let n = g.len();
        let mut p = Tensor::zeros(&[n]);
        let mut state = AdamState::new([&p]);
        adamw_step(&mut [&mut p], &[Tensor::new(vec![n], g.clone()).unwrap()], &mut state, &hyper(lr, 0.0)).unwrap();
        for (x, gj) in p.data().iter().zip(&g) {
            prop_assert!((x + lr * gj.signum()).abs() <= lr * 1e-4);
        }
    }
}
