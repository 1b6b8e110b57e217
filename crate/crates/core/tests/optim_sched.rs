mod common;

use common::{rng, uniform_vec};
use proptest::prelude::*;
use xray_vit::optim::{
    adam_step, radam_step, EarlyStopState, OptimState, OptimizerKind, PlateauState,
};

/// `rho_t` evaluated directly from its definition with `b2 = 0.999`.
fn rho_oracle(t: u64) -> f64 {
    let b2: f64 = 0.999;
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let mut b2t = 1.0;
    for _ in 0..t {
        b2t *= b2;
    }
    rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

fn single(kind: OptimizerKind, lr: f64, n: usize) -> OptimState {
    OptimState::new(kind, lr, &[n])
}

#[test]
fn zero_gradient_leaves_params_unchanged() {
    for kind in OptimizerKind::ALL {
        let mut s = single(kind, 0.1, 3);
        let mut p = vec![vec![0.3, -1.0, 2.5]];
        for _ in 0..10 {
            s.step_arrays(&mut p, &[&[0.0; 3]]).unwrap();
        }
        assert_eq!(p, vec![vec![0.3, -1.0, 2.5]]);
    }
}

#[test]
fn first_adam_step_is_minus_lr() {
    let mut s = single(OptimizerKind::Adam, 0.1, 1);
    let mut p = vec![vec![0.0]];
    adam_step(&mut p, &[&[1.0]], &mut s).unwrap();
    // m_hat = v_hat = 1 after bias correction
    assert!((p[0][0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    assert!((p[0][0] + 0.1).abs() < 1e-8);
}

#[test]
fn constant_gradient_update_tends_to_lr() {
    let mut s = single(OptimizerKind::Adam, 0.01, 2);
    let mut last = vec![];
    for _ in 0..5000 {
        last = s.updates(&[&[3.0, -0.2]]).unwrap();
    }
    assert!((last[0][0] + 0.01).abs() < 1e-8);
    assert!((last[0][1] - 0.01).abs() < 1e-8);
}

#[test]
fn radam_early_steps_use_plain_momentum() {
    for t in 1..=4 {
        assert!(rho_oracle(t) <= 4.0, "rho_{t} = {}", rho_oracle(t));
    }
    assert!(rho_oracle(5) > 4.0);

    let lr = 0.05;
    let grads = [0.7, -1.3, 0.2, 2.0, 0.9];
    let mut s = single(OptimizerKind::RectifiedAdam, lr, 1);
    let mut m = 0.0;
    for (i, &g) in grads.iter().enumerate() {
        let t = i as i32 + 1;
        m = 0.9 * m + 0.1 * g;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let d = s.updates(&[&[g]]).unwrap()[0][0];
        if t <= 4 {
            assert!(
                (d + lr * m_hat).abs() < 1e-15,
                "step {t}: {d} vs {}",
                -lr * m_hat
            );
        } else {
            assert!((d + lr * m_hat).abs() > 1e-6, "step {t} should adapt");
        }
    }
}

#[test]
fn radam_converges_to_adam() {
    let mut r = rng(12);
    let mut adam = single(OptimizerKind::Adam, 1e-3, 4);
    let mut radam = single(OptimizerKind::RectifiedAdam, 1e-3, 4);
    let mut ratios = vec![];
    for _ in 0..10_000 {
        let g = uniform_vec(&mut r, 4, 0.5, 1.5);
        let a = adam.updates(&[&g]).unwrap();
        let b = radam.updates(&[&g]).unwrap();
        ratios = b[0].iter().zip(&a[0]).map(|(x, y)| x / y).collect();
    }
    for ratio in ratios {
        assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio}");
    }
}

#[test]
fn unrectified_radam_equals_adam() {
    let mut r = rng(3);
    let mut adam = single(OptimizerKind::Adam, 2e-3, 5);
    let mut radam = single(OptimizerKind::RectifiedAdam, 2e-3, 5);
    radam.rectify = false;
    let mut pa = vec![uniform_vec(&mut r, 5, -1.0, 1.0)];
    let mut pr = pa.clone();
    for _ in 0..200 {
        let g = uniform_vec(&mut r, 5, -2.0, 2.0);
        adam_step(&mut pa, &[&g], &mut adam).unwrap();
        radam_step(&mut pr, &[&g], &mut radam).unwrap();
    }
    for (a, b) in pa[0].iter().zip(&pr[0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn flat_trace_reduces_lr_after_patience() {
    let mut s = PlateauState::new(0.2, 3, 1e-7);
    let mut lr = 1e-4;
    let mut trace = vec![];
    for _ in 0..8 {
        lr = s.step(0.9, lr).unwrap();
        trace.push(lr);
    }
    let reduced = 1e-4 * 0.2;
    assert_eq!(
        trace,
        vec![1e-4, 1e-4, 1e-4, 1e-4, reduced, reduced, reduced, reduced]
    );
    assert!((reduced - 2e-5).abs() < 1e-18);
}

#[test]
fn improving_trace_keeps_lr() {
    let mut s = PlateauState::default();
    let mut e = EarlyStopState::default();
    let mut lr = 1e-4;
    for i in 0..30 {
        let m = 0.5 + i as f64 * 0.01;
        lr = s.step(m, lr).unwrap();
        assert!(!e.step(m).unwrap());
    }
    assert_eq!(lr, 1e-4);
}

#[test]
fn improvement_mid_stall_prevents_reduction() {
    let mut s = PlateauState::default();
    let mut lr = 1e-4;
    for m in [0.8, 0.8, 0.8, 0.85, 0.85, 0.85, 0.85] {
        lr = s.step(m, lr).unwrap();
    }
    assert_eq!(lr, 1e-4);
}

fn stop_epoch(trace: &[f64], patience: usize) -> Option<usize> {
    let mut s = EarlyStopState::new(patience);
    trace
        .iter()
        .position(|&m| s.step(m).unwrap())
        .map(|i| i + 1)
}

#[test]
fn flat_trace_stops_at_patience_plus_one() {
    assert_eq!(stop_epoch(&[0.7; 20], 5), Some(6));
    assert_eq!(stop_epoch(&[0.7; 20], 2), Some(3));
}

#[test]
fn stall_after_fifth_epoch_stops_at_tenth() {
    let trace = [
        0.60, 0.70, 0.75, 0.80, 0.82, 0.81, 0.80, 0.82, 0.79, 0.81, 0.83, 0.84,
    ];
    assert_eq!(stop_epoch(&trace, 5), Some(10));
}

proptest! {
    #[test]
    fn doubling_lr_doubles_updates(
        seed in 0u64..10_000,
        steps in 1usize..30,
        radam in any::<bool>(),
        lr in 1e-6f64..1e-2,
    ) {
        let kind = if radam { OptimizerKind::RectifiedAdam } else { OptimizerKind::Adam };
        let mut r = rng(seed);
        let mut a = single(kind, lr, 6);
        let mut b = single(kind, 2.0 * lr, 6);
        for _ in 0..steps {
            let g = uniform_vec(&mut r, 6, -3.0, 3.0);
            let ua = a.updates(&[&g]).unwrap();
            let ub = b.updates(&[&g]).unwrap();
            for (x, y) in ua[0].iter().zip(&ub[0]) {
                prop_assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn updates_keep_shapes_and_finiteness(
        seed in 0u64..10_000,
        radam in any::<bool>(),
        sizes in prop::collection::vec(1usize..8, 1..4),
    ) {
        let kind = if radam { OptimizerKind::RectifiedAdam } else { OptimizerKind::Adam };
        let mut r = rng(seed);
        let mut s = OptimState::new(kind, 1e-3, &sizes);
        let mut params: Vec<Vec<f64>> = sizes.iter().map(|&n| uniform_vec(&mut r, n, -1.0, 1.0)).collect();
        for step in 1..=12u64 {
            let grads: Vec<Vec<f64>> = sizes.iter().map(|&n| uniform_vec(&mut r, n, -1e3, 1e3)).collect();
            let views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            s.step_arrays(&mut params, &views).unwrap();
            prop_assert_eq!(s.step_count(), step);
        }
        for (p, &n) in params.iter().zip(&sizes) {
            prop_assert_eq!(p.len(), n);
            prop_assert!(p.iter().all(|v| v.is_finite()));
        }
        prop_assert!(s.second_moments().iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn plateau_lr_is_nonincreasing_and_floored(trace in prop::collection::vec(0.0f64..1.0, 1..60)) {
        let mut s = PlateauState::default();
        let mut lr = 1e-4;
        for m in trace {
            let next = s.step((m * 10.0).round() / 10.0, lr).unwrap();
            prop_assert!(next <= lr);
            prop_assert!(next >= 1e-7);
            lr = next;
        }
    }

    #[test]
    fn early_stop_is_permanent(trace in prop::collection::vec(0.0f64..1.0, 1..60), patience in 1usize..6) {
        let mut s = EarlyStopState::new(patience);
        let mut seen = false;
        for m in trace {
            let stop = s.step((m * 5.0).round() / 5.0).unwrap();
            prop_assert!(!seen || stop);
            seen |= stop;
        }
    }
}
