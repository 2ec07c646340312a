use misspec_core::inference::{log_pseudo_lr, scaled_log_lr};
use misspec_core::observation::{drift_increments, sample_wiener, simulate_path, synthesize};
use misspec_core::profile::kl_minimizer;
use misspec_core::rng::stream_rng;
use misspec_core::{InferencePlan, ParamWindow, Prior, SignalSpec, TimeGrid};
use proptest::prelude::*;
use rand::Rng;

fn example1() -> (SignalSpec<f64>, SignalSpec<f64>, ParamWindow<f64>, TimeGrid<f64>) {
    (
        SignalSpec::linear_drift(),
        SignalSpec::sgn(),
        ParamWindow::new(0.1, 0.9),
        TimeGrid::new(1.0, 4096).unwrap(),
    )
}

fn example2() -> (SignalSpec<f64>, SignalSpec<f64>, ParamWindow<f64>, TimeGrid<f64>) {
    (
        SignalSpec::sgn(),
        SignalSpec::linear_drift(),
        ParamWindow::new(0.5, 3.5),
        TimeGrid::new(4.0, 2048).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pmle_beats_random_probes(seed in 0u64..100_000, eps in 0.02..0.3_f64, smooth in any::<bool>()) {
        let (truth, assumed, window, grid) = if smooth { example2() } else { example1() };
        let theta0 = if smooth { 1.0 } else { 0.5 };
        let drift = drift_increments(&truth, theta0, &grid);
        let path = simulate_path(&grid, &drift, eps, seed, 0);
        let plan = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
        let est = plan.pmle(&path).unwrap();
        let best = log_pseudo_lr(&assumed, est.theta, &path).unwrap();
        let mut rng = stream_rng(seed, 1);
        for _ in 0..64 {
            let probe = rng.random_range(window.lower..window.upper);
            let v = log_pseudo_lr(&assumed, probe, &path).unwrap();
            prop_assert!(best >= v - 1e-9 * (1.0 + v.abs()), "probe {} gives {} > {}", probe, v, best);
        }
    }

    #[test]
    fn example2_closed_form_on_every_path(seed in 0u64..100_000, eps in 0.005..0.2_f64) {
        let (truth, assumed, window, grid) = example2();
        let t = grid.horizon;
        let path = simulate_path(&grid, &drift_increments(&truth, 1.0, &grid), eps, seed, 0);
        let plan = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
        let est = plan.pmle(&path).unwrap();
        let closed = (t * t - 2.0 * path.terminal()) / (2.0 * t);
        prop_assert!((est.theta - closed).abs() <= window.tol_theta(), "{} vs {}", est.theta, closed);
    }

    #[test]
    fn bayes_stays_inside_the_window(seed in 0u64..100_000, eps in 0.05..1.0_f64, smooth in any::<bool>()) {
        let (truth, assumed, window, grid) = if smooth { example2() } else { example1() };
        let theta0 = if smooth { 1.0 } else { 0.5 };
        let path = simulate_path(&grid, &drift_increments(&truth, theta0, &grid), eps, seed, 0);
        let plan = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
        let b = plan.bayes(&path, &Prior::uniform()).unwrap();
        prop_assert!(window.contains(b), "{}", b);
        let b7 = plan.bayes(&path, &Prior::uniform().rescaled(7.0)).unwrap();
        prop_assert_eq!(b.to_bits(), b7.to_bits());
    }
}

#[test]
fn restricting_the_window_moves_bayes_by_at_most_the_tail_mass() {
    let (truth, assumed, window, grid) = example1();
    let eps = 0.3;
    for seed in 0..8 {
        let path = simulate_path(&grid, &drift_increments(&truth, 0.5, &grid), eps, seed, 0);
        let full = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
        let mle = full.pmle(&path).unwrap().theta;
        let k = grid.cell_of(mle);
        let inner = ParamWindow::new(
            grid.node(k.saturating_sub(400).max(410)),
            grid.node((k + 400).min(3686)),
        );
        let narrow = InferencePlan::new(&assumed, &inner, &grid, false).unwrap();
        let profile = full.scaled_profile(&path).unwrap();
        let top = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let weight = |(_, v): &(f64, f64)| ((v - top) / (eps * eps)).exp();
        let total: f64 = profile.iter().map(weight).sum();
        let outside: f64 = profile.iter().filter(|p| !inner.contains(p.0)).map(weight).sum();
        let tail = outside / total;
        let b_full = full.bayes(&path, &Prior::uniform()).unwrap();
        let b_narrow = narrow.bayes(&path, &Prior::uniform()).unwrap();
        let shift = (b_full - b_narrow).abs();
        assert!(
            shift <= tail * window.width() + 1e-9,
            "seed {seed}: shift {shift}, tail mass {tail}"
        );
    }
}

#[test]
fn pmle_approaches_the_kl_minimizer_as_eps_shrinks() {
    // smooth: the error is exactly linear in ε on a fixed noise path
    let (truth, assumed, window, grid) = example2();
    let target = kl_minimizer(&assumed, &truth, 1.0, &window, &grid).unwrap();
    let plan = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
    for seed in 0..5 {
        let w = sample_wiener(&grid, seed, 0);
        let errs: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&eps| (plan.pmle(&synthesize(&truth, 1.0, eps, &w)).unwrap().theta - target).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        // |W_T| / T ≤ 4 sd at ε = 0.001
        assert!(
            errs[2] <= 10.0 * window.tol_theta() + 4.0 * 0.001 / grid.horizon.sqrt(),
            "{errs:?}"
        );
    }

    // change point: O(ε^{2/3}) localization plus one cell
    let (truth, assumed, window, grid) = example1();
    let plan = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
    for seed in 0..5 {
        let w = sample_wiener(&grid, seed, 0);
        let errs: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&eps| (plan.pmle(&synthesize(&truth, 0.5, eps, &w)).unwrap().theta - 0.5).abs())
            .collect();
        assert!(errs[2] <= errs[0], "{errs:?}");
        assert!(errs[2] <= 5.0 * 0.001_f64.powf(2.0 / 3.0) + grid.dt(), "{errs:?}");
    }
    let noiseless = synthesize(&truth, 0.5, 0.0, &sample_wiener(&grid, 0, 0));
    let exact = plan.pmle(&noiseless).unwrap().theta;
    assert!((exact - 0.5).abs() <= window.tol_theta());
}

#[test]
fn scaled_likelihood_is_eps_squared_times_log_lr() {
    let (truth, assumed, _, grid) = example2();
    let path = simulate_path(&grid, &drift_increments(&truth, 1.0, &grid), 0.07, 5, 0);
    let l = log_pseudo_lr(&assumed, 1.3, &path).unwrap();
    let s = scaled_log_lr(&assumed, 1.3, &grid, &path.increments());
    assert!((l * 0.07 * 0.07 - s).abs() <= 1e-12 * s.abs().max(1.0));
}

#[test]
fn f32_pmle_on_example2() {
    let grid = TimeGrid::new(4.0_f32, 2048).unwrap();
    let window = ParamWindow::new(0.5_f32, 3.5);
    let truth = SignalSpec::<f32>::sgn();
    let assumed = SignalSpec::<f32>::linear_drift();
    let path = simulate_path(&grid, &drift_increments(&truth, 1.0, &grid), 0.0_f32, 0, 0);
    let mut noiseless = path.clone();
    noiseless.eps = 1e-3;
    let plan = InferencePlan::new(&assumed, &window, &grid, false).unwrap();
    let est = plan.pmle(&noiseless).unwrap();
    assert!((est.theta - 1.5).abs() < 1e-3, "{}", est.theta);
}
