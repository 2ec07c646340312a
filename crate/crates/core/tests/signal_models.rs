use approx::assert_relative_eq;
use misspec_core::profile::{
    check_perturbation_conditions, curvature_smooth, kl_minimizer, necessary_condition_residual, phi,
    phi_second_difference, phi_table,
};
use misspec_core::{preset, DeterministicProfile, ParamWindow, SignalSpec, TimeFn, TimeGrid, PRESET_NAMES};
use proptest::prelude::*;

fn grid(t: f64, n: usize) -> TimeGrid<f64> {
    TimeGrid::new(t, n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phi_is_nonnegative_and_minimized_at_the_reported_minimizer(
        theta0 in 0.3..0.7_f64,
        amplitude in 0.5..2.0_f64,
        omega in 0.5..2.0_f64,
    ) {
        let g = grid(1.0, 2048);
        let w = ParamWindow::new(0.1, 0.9);
        let truth = SignalSpec::sine(amplitude, omega);
        let assumed = SignalSpec::sgn();
        for (_, v) in phi_table(&assumed, &truth, theta0, &w, &g, 97) {
            prop_assert!(v >= 0.0);
        }
        if let Ok(p) = DeterministicProfile::compute(&assumed, &truth, theta0, &w, &g) {
            for v in &p.scan_phi {
                prop_assert!(p.phi_min <= *v + 1e-12);
            }
        }
    }

    #[test]
    fn correct_smooth_model_recovers_truth(theta0 in 0.2..0.8_f64) {
        let g = grid(1.0, 1024);
        let w = ParamWindow::new(0.1, 0.9);
        let s = SignalSpec::linear_drift();
        let th = kl_minimizer(&s, &s, theta0, &w, &g).unwrap();
        prop_assert!((th - theta0).abs() <= w.tol_theta() * 10.0);
    }

    #[test]
    fn perturbation_conditions_imply_consistency(
        theta0 in 0.3..0.7_f64,
        h in 0.5..2.0_f64,
        gap in 0.5..2.0_f64,
        q in -0.9..0.9_f64,
        r in -0.9..0.9_f64,
    ) {
        let g = h - gap;
        let (hf, gf) = (TimeFn::constant(h), TimeFn::constant(g));
        let (qf, rf) = (TimeFn::constant(q * gap), TimeFn::constant(r * gap));
        let w = ParamWindow::new(0.1, 0.9);
        let tg = grid(1.0, 4096);
        let check = check_perturbation_conditions(&hf, &gf, Some(&qf), Some(&rf), &w, &tg).unwrap();
        prop_assert_eq!(check.verdict, q > -0.5 && r < 0.5);
        if check.verdict {
            let assumed = SignalSpec::step(hf.clone(), gf.clone());
            let truth = SignalSpec::step(hf, gf).with_perturbations(Some(qf), Some(rf));
            let th = kl_minimizer(&assumed, &truth, theta0, &w, &tg).unwrap();
            prop_assert!((th - theta0).abs() <= tg.dt(), "minimizer {} vs {}", th, theta0);
        }
    }

    #[test]
    fn change_point_residual_vanishes_at_interior_minimizer(theta0 in 0.35..0.65_f64) {
        let g = grid(1.0, 1 << 14);
        let w = ParamWindow::new(0.1, 0.9);
        let truth = SignalSpec::linear_drift();
        let assumed = SignalSpec::step(TimeFn::constant(-1.2), TimeFn::constant(0.8));
        let th = kl_minimizer(&assumed, &truth, theta0, &w, &g).unwrap();
        let r = necessary_condition_residual(&assumed, &truth, theta0, th).unwrap();
        prop_assert!(r.abs() <= 1e-6, "residual {}", r);
        // S(θ0, θ̂) = t − θ0 = (h+g)/2
        prop_assert!((th - (theta0 - 0.2)).abs() <= 1e-6);
    }
}

#[test]
fn smooth_curvature_is_half_the_second_difference() {
    let cases = [("example2", 4.0), ("smooth-vs-disc-general", 2.0)];
    for (name, _) in cases {
        let s = preset::<f64>(name).unwrap();
        let th = kl_minimizer(&s.assumed, &s.truth, s.theta0, &s.window, &s.grid).unwrap();
        let c = curvature_smooth(&s.assumed, &s.truth, s.theta0, th, &s.grid).unwrap();
        for hc in [1e-2, 1e-3] {
            let d2 = phi_second_difference(&s.assumed, &s.truth, s.theta0, th, hc, &s.grid);
            assert_relative_eq!(c, d2 / 2.0, max_relative = 0.01);
        }
    }
    // example2 closed form: Φ̈ = 2T
    let s = preset::<f64>("example2").unwrap();
    let c = curvature_smooth(&s.assumed, &s.truth, s.theta0, 1.5, &s.grid).unwrap();
    assert_relative_eq!(c, 4.0, max_relative = 1e-9);
}

#[test]
fn minorant_holds_on_every_preset() {
    for name in PRESET_NAMES {
        let s = preset::<f64>(name).unwrap();
        let p = DeterministicProfile::compute(&s.assumed, &s.truth, s.theta0, &s.window, &s.grid).unwrap();
        assert!(p.minorant_kappa > 0.0, "{name}");
        assert!(p.minorant_holds(), "{name}");
    }
}

#[test]
fn quadrature_converges_at_second_order() {
    // smooth integrand: sine model against a linear truth
    let truth = SignalSpec::linear_drift();
    let assumed = SignalSpec::sine(1.0, 3.0);
    let at = |n| phi(&assumed, &truth, 0.4, 0.55, &grid(1.0, n));
    // |Φ_n − Φ_2n| ≤ C Δ² with one C for every n
    let scaled: Vec<f64> = [64usize, 128, 256, 512, 1024]
        .iter()
        .map(|&n| (at(n) - at(2 * n)).abs() * (n * n) as f64)
        .collect();
    let c = scaled[0];
    assert!(c > 0.0);
    for s in &scaled {
        assert!(*s <= 1.5 * c && *s >= c / 3.0, "{scaled:?}");
    }
    // jumps at off-grid points are split exactly: Φ = 4|θ − θ0| for sgn against sgn
    let sgn = SignalSpec::sgn();
    for n in [64, 1000, 1 << 14] {
        assert_relative_eq!(
            phi(&sgn, &sgn, 0.5123, 0.3337, &grid(1.0, n)),
            4.0 * (0.5123 - 0.3337),
            max_relative = 1e-12
        );
    }
}

#[test]
fn example1_values() {
    let s = preset::<f64>("example1").unwrap();
    let p = DeterministicProfile::compute(&s.assumed, &s.truth, s.theta0, &s.window, &s.grid).unwrap();
    assert_relative_eq!(p.kl_minimizer, 0.5, epsilon = s.window.tol_theta());
    assert_relative_eq!(p.curvature_oracle, 4.0, max_relative = 1e-3);
    assert_relative_eq!(p.jump.unwrap().abs(), 2.0);
    assert_relative_eq!(p.phi_min, 7.0 / 12.0, max_relative = 1e-8);
}

#[test]
fn f32_profile_agrees_with_f64() {
    let s32 = preset::<f32>("example2").unwrap();
    let p = DeterministicProfile::compute(&s32.assumed, &s32.truth, s32.theta0, &s32.window, &s32.grid).unwrap();
    assert!((p.kl_minimizer - 1.5).abs() < 1e-4, "{}", p.kl_minimizer);
}
