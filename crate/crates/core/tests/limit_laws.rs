use misspec_core::limit::{parse_ratio, quadratic_scaling_check, rate_exponent, sample_argmax, ArgmaxLawSpec};
use misspec_core::stats::{iqr, ks_critical_two_sample, ks_two_sample, mean, sample_sd};
use misspec_core::{Rational, Regime};
use proptest::prelude::*;

fn symmetric_within_three_se(spec: &ArgmaxLawSpec<f64>, seed: u64, n: usize) {
    let x = sample_argmax(spec, seed, n).unwrap().values;
    let se = sample_sd(&x) / (n as f64).sqrt();
    assert!(mean(&x).abs() < 3.0 * se, "mean {} se {se}", mean(&x));
}

#[test]
fn quadratic_and_power_laws_are_symmetric() {
    symmetric_within_three_se(&ArgmaxLawSpec::quadratic(1.0, 1.0).unwrap(), 11, 20_000);
    symmetric_within_three_se(&ArgmaxLawSpec::quadratic(2.0, 0.5).unwrap(), 12, 20_000);
    symmetric_within_three_se(&ArgmaxLawSpec::power(1.5).unwrap(), 13, 20_000);
}

#[test]
fn halving_the_lattice_step_is_stable() {
    let n = 10_000;
    let coarse = ArgmaxLawSpec::<f64>::quadratic(1.0, 1.0).unwrap();
    let fine = coarse.with_step(coarse.step / 2.0);
    let a = sample_argmax(&coarse, 21, n).unwrap().values;
    let b = sample_argmax(&fine, 22, n).unwrap().values;
    let d = ks_two_sample(&a, &b).unwrap();
    assert!(d < ks_critical_two_sample(0.01, n, n), "KS {d}");
}

#[test]
fn power_law_spread_is_ordered_in_kappa() {
    let n = 100_000;
    let spreads: Vec<f64> = [0.6, 1.0, 1.5]
        .iter()
        .enumerate()
        .map(|(k, &kappa)| {
            iqr(
                &sample_argmax(&ArgmaxLawSpec::<f64>::power(kappa).unwrap(), 40 + k as u64, n)
                    .unwrap()
                    .values,
            )
        })
        .collect();
    assert!(spreads[0] < spreads[1] && spreads[1] < spreads[2], "IQRs {spreads:?}");
}

#[test]
fn linear_cp_standardizes_across_delta() {
    let n = 20_000;
    let one = sample_argmax(&ArgmaxLawSpec::<f64>::linear_cp(1.0).unwrap(), 31, n).unwrap();
    let two = sample_argmax(&ArgmaxLawSpec::<f64>::linear_cp(2.0).unwrap(), 32, n).unwrap();
    let scaled: Vec<f64> = two.values.iter().map(|v| 4.0 * v).collect();
    let d = ks_two_sample(&one.values, &scaled).unwrap();
    assert!(d < 1.5 * ks_critical_two_sample(0.01, n, n), "KS {d}");
    assert!(one.hit_rate() < 1e-3);
}

#[test]
fn scaling_identity_small_sample() {
    let c = quadratic_scaling_check(2.0, 1.0, 3, 5_000).unwrap();
    assert!(c.pass, "{c:?}");
}

proptest! {
    #[test]
    fn remark1_rate_is_exact(p in 1i64..40, q in 1i64..20) {
        let kappa = Rational::new(p, q);
        prop_assume!(kappa > Rational::new(1, 2));
        let rho = rate_exponent(&Regime::PowerFamily { kappa });
        prop_assert_eq!(rho * (Rational::from_integer(2) * kappa + 1), Rational::from_integer(2));
        let tag = Regime::PowerFamily { kappa }.to_string();
        prop_assert_eq!(tag.parse::<Regime>().unwrap(), Regime::PowerFamily { kappa });
    }

    #[test]
    fn ratios_parse_exactly(p in -50i64..50, q in 1i64..50) {
        let r = Rational::new(p, q);
        prop_assert_eq!(parse_ratio(&format!("{}/{}", p, q)), Some(r));
    }

    #[test]
    fn samples_stay_inside_truncation(delta in 0.5..3.0_f64, gamma in 0.5..3.0_f64, seed in 0u64..1000) {
        let spec = ArgmaxLawSpec::<f64>::quadratic(delta, gamma).unwrap();
        let s = sample_argmax(&spec, seed, 200).unwrap();
        prop_assert!(s.values.iter().all(|v| v.abs() <= spec.truncation + spec.step));
        let again = sample_argmax(&spec, seed, 200).unwrap();
        prop_assert_eq!(s.values, again.values);
    }
}

#[test]
fn table_of_rates() {
    assert_eq!(rate_exponent(&Regime::DiscVsSmooth), Rational::new(2, 3));
    assert_eq!(rate_exponent(&Regime::DiscVsDisc), Rational::from_integer(2));
    assert_eq!(rate_exponent(&Regime::SmoothVsDisc), Rational::from_integer(1));
    assert_eq!(
        rate_exponent(&Regime::PowerFamily {
            kappa: Rational::from_integer(1)
        }),
        Rational::new(2, 3)
    );
    assert_eq!(
        rate_exponent(&Regime::PowerFamily {
            kappa: Rational::new(3, 2)
        }),
        Rational::new(1, 2)
    );
    assert!("banana".parse::<Regime>().is_err());
}
