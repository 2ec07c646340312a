use misspec_core::stats::ks_normal;
use misspec_core::{preset, run_scenario, Error, Estimator, Rational, Regime, Scenario, PRESET_NAMES};

fn small(name: &str, ladder: &[f64], n: usize) -> Scenario<f64> {
    let mut s = preset(name).unwrap();
    s.ladder = ladder.to_vec();
    s.replications = n;
    s
}

#[test]
fn report_is_identical_across_thread_pools() {
    let s = small("disc-vs-disc", &[0.2, 0.1], 60);
    let json = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let r = run_scenario(&s).unwrap();
                let mut csv = Vec::new();
                r.write_estimates_csv(&mut csv).unwrap();
                (r.to_json().unwrap(), csv)
            })
    };
    assert_eq!(json(1), json(3));
}

#[test]
fn example2_errors_are_centred_at_the_kl_minimizer() {
    let s = small("example2", &[0.01], 400);
    let r = run_scenario(&s).unwrap();
    assert!((r.profile.kl_minimizer - 1.5).abs() < 1e-9);
    let variance = r.limit_variance.unwrap();
    assert!((variance - 0.25).abs() < 1e-9);
    let right = r.normalized_errors(0, Estimator::Mle);
    assert!(ks_normal(&right, variance).unwrap() < 0.1);
    let wrong: Vec<f64> = r.records.iter().map(|rec| (rec.theta_mle - s.theta0) / 0.01).collect();
    assert!(ks_normal(&wrong, variance).unwrap() > 0.5);
}

#[test]
fn low_replication_runs_are_not_gated() {
    let r = run_scenario(&small("example1", &[0.1, 0.05], 10)).unwrap();
    assert!(!r.gated);
    assert!(r.pass);
    assert!(r.notes.iter().any(|n| n == "low-N: targets not evaluated"));
    assert!(r.targets.iter().all(|t| !t.gating));
    assert_eq!(r.records.len(), 20);
}

#[test]
fn unknown_preset_lists_the_available_ones() {
    match preset::<f64>("example9") {
        Err(Error::UnknownPreset { available, .. }) => {
            for name in PRESET_NAMES {
                assert!(available.contains(name));
            }
        }
        other => panic!("expected UnknownPreset, got {other:?}"),
    }
}

#[test]
fn preset_regimes_and_rates() {
    let rate = |name: &str| preset::<f64>(name).unwrap().rate();
    assert_eq!(rate("example1"), Rational::new(2, 3));
    assert_eq!(rate("example2"), Rational::from_integer(1));
    assert_eq!(rate("disc-vs-disc"), Rational::from_integer(2));
    assert_eq!(rate("remark1-kappa"), Rational::new(1, 2));
    let cusp = preset::<f64>("cusp-kl-scan").unwrap();
    assert_eq!(
        cusp.regime,
        Regime::CuspVsSmooth {
            kappa: Rational::new(1, 4)
        }
    );
    assert_eq!(cusp.label.as_deref(), Some("cusp: limit law out of scope"));
    for name in PRESET_NAMES {
        preset::<f64>(name).unwrap().validate().unwrap();
    }
}

#[test]
fn cusp_preset_runs_the_profile_only() {
    let r = run_scenario(&preset::<f64>("cusp-kl-scan").unwrap()).unwrap();
    assert!(r.rungs.is_empty());
    assert!(r.slope.is_none());
    assert_eq!(r.profile.scan_theta.len(), 512);
    assert!(r.notes.iter().any(|n| n.contains("no ladder")));
}

#[test]
fn rung_grids_resolve_eps_squared_for_change_points() {
    let s = preset::<f64>("example1").unwrap();
    let g = s.rung_grid(0.01);
    assert!(g.steps as f64 >= 50.0 / 1e-4);
    assert_eq!(g.steps % 4096, 0);
    let smooth = preset::<f64>("example2").unwrap();
    assert_eq!(smooth.rung_grid(0.01).steps, smooth.grid.steps);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut s = small("example1", &[0.1], 10);
    s.ladder = vec![-0.1];
    assert!(run_scenario(&s).is_err());
    let mut s = small("example1", &[0.1], 10);
    s.estimators.clear();
    assert!(run_scenario(&s).is_err());
}

#[test]
fn f32_scenario_runs() {
    let mut s: Scenario<f32> = preset("example2").unwrap();
    s.ladder = vec![0.05, 0.025];
    s.replications = 20;
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.rungs.len(), 2);
    assert!((r.profile.kl_minimizer - 1.5).abs() < 1e-3);
    let errs = r.normalized_errors(1, Estimator::Mle);
    assert_eq!(errs.len(), 20);
    assert!(errs.iter().all(|e| e.is_finite()));
}

#[test]
fn report_json_round_trips_through_serde() {
    let r = run_scenario(&small("remark1-kappa", &[0.1, 0.05], 20)).unwrap();
    let json = r.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["scenario"], "remark1-kappa");
    assert_eq!(v["rate_exponent"], "1/2");
    assert!(v.get("records").is_none());
    assert!(!json.contains("e-"), "exponent notation in report");
}
