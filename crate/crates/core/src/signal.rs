//! Parametric signal families `M(θ, t)` / `S(θ, t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Side;
use crate::scalar::{sgn, Real};

/// A deterministic function of time used for change-point branches and perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "")]
pub enum TimeFn<T: Real> {
    Const(T),
    /// `c0 + c1 t + c2 t^2 + ...`
    Poly {
        poly: Vec<T>,
    },
    /// `amplitude * sin(omega t + phase)`
    Sine {
        amplitude: T,
        omega: T,
        #[serde(default)]
        phase: T,
    },
}

impl<T: Real> TimeFn<T> {
    pub fn constant(c: f64) -> Self {
        TimeFn::Const(T::lit(c))
    }

    pub fn value(&self, t: T) -> T {
        match self {
            TimeFn::Const(c) => *c,
            TimeFn::Poly { poly } => poly.iter().rev().fold(T::zero(), |acc, &c| acc * t + c),
            TimeFn::Sine {
                amplitude,
                omega,
                phase,
            } => *amplitude * (*omega * t + *phase).sin(),
        }
    }

    pub fn derivative(&self, t: T) -> T {
        match self {
            TimeFn::Const(_) => T::zero(),
            TimeFn::Poly { poly } => poly
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(T::zero(), |acc, (k, &c)| acc * t + T::of_usize(k) * c),
            TimeFn::Sine {
                amplitude,
                omega,
                phase,
            } => *amplitude * *omega * (*omega * t + *phase).cos(),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            TimeFn::Const(c) => c.is_finite(),
            TimeFn::Poly { poly } => poly.iter().all(|c| c.is_finite()),
            TimeFn::Sine {
                amplitude,
                omega,
                phase,
            } => amplitude.is_finite() && omega.is_finite() && phase.is_finite(),
        }
    }
}

/// The closed-form families, identified in config files by their `family` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", bound = "")]
pub enum Family<T: Real> {
    /// `t - θ`
    LinearDrift,
    /// `sgn(t - θ)`: `-1` before the jump, `+1` from it on.
    Sgn,
    /// `sgn(t - θ) |t - θ|^κ`
    PowerSgn { kappa: T },
    /// `a |t - θ|^κ`, `0 < κ < 1/2`
    Cusp { amplitude: T, kappa: T },
    /// `h(t)` before θ, `g(t)` from θ on.
    StepHg { h: TimeFn<T>, g: TimeFn<T> },
    /// `a sin(ω t - θ)`
    Sine { amplitude: T, omega: T },
}

/// A signal family plus optional perturbations `q` (added before θ) and `r` (added from θ on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SignalSpec<T: Real> {
    #[serde(flatten)]
    pub family: Family<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<TimeFn<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<TimeFn<T>>,
}

impl<T: Real> From<Family<T>> for SignalSpec<T> {
    fn from(family: Family<T>) -> Self {
        Self {
            family,
            q: None,
            r: None,
        }
    }
}

impl<T: Real> SignalSpec<T> {
    pub fn new(family: Family<T>) -> Result<Self> {
        let spec = Self::from(family);
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear_drift() -> Self {
        Family::LinearDrift.into()
    }

    pub fn sgn() -> Self {
        Family::Sgn.into()
    }

    pub fn step(h: TimeFn<T>, g: TimeFn<T>) -> Self {
        Family::StepHg { h, g }.into()
    }

    pub fn sine(amplitude: f64, omega: f64) -> Self {
        Family::Sine {
            amplitude: T::lit(amplitude),
            omega: T::lit(omega),
        }
        .into()
    }

    pub fn power_sgn(kappa: f64) -> Self {
        Family::PowerSgn { kappa: T::lit(kappa) }.into()
    }

    pub fn cusp(amplitude: f64, kappa: f64) -> Self {
        Family::Cusp {
            amplitude: T::lit(amplitude),
            kappa: T::lit(kappa),
        }
        .into()
    }

    pub fn with_perturbations(mut self, q: Option<TimeFn<T>>, r: Option<TimeFn<T>>) -> Self {
        self.q = q;
        self.r = r;
        self
    }

    pub fn tag(&self) -> &'static str {
        match self.family {
            Family::LinearDrift => "linear-drift",
            Family::Sgn => "sgn",
            Family::PowerSgn { .. } => "power-sgn",
            Family::Cusp { .. } => "cusp",
            Family::StepHg { .. } => "step-hg",
            Family::Sine { .. } => "sine",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: T, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{} {what} must be finite", self.tag())))
            }
        };
        match &self.family {
            Family::LinearDrift | Family::Sgn => {}
            Family::PowerSgn { kappa } => {
                finite(*kappa, "kappa")?;
                if !(*kappa > T::zero()) {
                    return Err(Error::InvalidSpec(format!(
                        "power-sgn exponent must be > 0, got {kappa}"
                    )));
                }
            }
            Family::Cusp { amplitude, kappa } => {
                finite(*amplitude, "amplitude")?;
                if !(*kappa > T::zero() && *kappa < T::lit(0.5)) {
                    return Err(Error::InvalidSpec(format!(
                        "cusp exponent must lie in (0, 1/2), got {kappa}"
                    )));
                }
            }
            Family::StepHg { h, g } => {
                if !h.is_finite() || !g.is_finite() {
                    return Err(Error::InvalidSpec("step-hg branches must be finite".into()));
                }
            }
            Family::Sine { amplitude, omega } => {
                finite(*amplitude, "amplitude")?;
                finite(*omega, "omega")?;
            }
        }
        for p in self.q.iter().chain(self.r.iter()) {
            if !p.is_finite() {
                return Err(Error::InvalidSpec("perturbation coefficients must be finite".into()));
            }
        }
        Ok(())
    }

    /// True for families whose value jumps at `t = θ` (change-point families).
    pub fn is_change_point(&self) -> bool {
        matches!(self.family, Family::Sgn | Family::StepHg { .. })
    }

    /// True if the value can jump at `t = θ` (change-point family or a perturbation present).
    pub fn may_jump(&self) -> bool {
        self.is_change_point() || self.q.is_some() || self.r.is_some()
    }

    #[inline]
    fn is_before(theta: T, t: T, side: Side) -> bool {
        t < theta || (t == theta && side == Side::Left)
    }

    #[inline]
    fn perturbation(&self, before: bool, t: T) -> T {
        let p = if before { &self.q } else { &self.r };
        p.as_ref().map_or(T::zero(), |f| f.value(t))
    }

    #[inline]
    fn perturbation_dt(&self, before: bool, t: T) -> T {
        let p = if before { &self.q } else { &self.r };
        p.as_ref().map_or(T::zero(), |f| f.derivative(t))
    }

    /// Right-continuous value: at `t = θ` the after-jump branch is used.
    #[inline]
    pub fn eval(&self, theta: T, t: T) -> T {
        self.eval_sided(theta, t, Side::Right)
    }

    /// One-sided value; `side` only matters at `t = θ`.
    pub fn eval_sided(&self, theta: T, t: T, side: Side) -> T {
        let before = Self::is_before(theta, t, side);
        let base = match &self.family {
            Family::LinearDrift => t - theta,
            Family::Sgn => {
                if before {
                    -T::one()
                } else {
                    T::one()
                }
            }
            Family::PowerSgn { kappa } => sgn(t - theta) * (t - theta).abs().powf(*kappa),
            Family::Cusp { amplitude, kappa } => *amplitude * (t - theta).abs().powf(*kappa),
            Family::StepHg { h, g } => {
                if before {
                    h.value(t)
                } else {
                    g.value(t)
                }
            }
            Family::Sine { amplitude, omega } => *amplitude * (*omega * t - theta).sin(),
        };
        base + self.perturbation(before, t)
    }

    /// Branch values `(before, after)` of a change-point family at time `t`.
    pub fn branches(&self, t: T) -> Result<(T, T)> {
        match &self.family {
            Family::Sgn => Ok((
                -T::one() + self.perturbation(true, t),
                T::one() + self.perturbation(false, t),
            )),
            Family::StepHg { h, g } => Ok((
                h.value(t) + self.perturbation(true, t),
                g.value(t) + self.perturbation(false, t),
            )),
            _ => Err(Error::NotApplicable("change-point branch evaluation")),
        }
    }

    /// Time derivatives `(before', after')` of the change-point branches.
    pub fn branch_derivatives(&self, t: T) -> Result<(T, T)> {
        match &self.family {
            Family::Sgn => Ok((self.perturbation_dt(true, t), self.perturbation_dt(false, t))),
            Family::StepHg { h, g } => Ok((
                h.derivative(t) + self.perturbation_dt(true, t),
                g.derivative(t) + self.perturbation_dt(false, t),
            )),
            _ => Err(Error::NotApplicable("change-point branch evaluation")),
        }
    }

    /// Time derivative `∂_t` of the signal (one-sided at the jump).
    pub fn dt(&self, theta: T, t: T, side: Side) -> Result<T> {
        let before = Self::is_before(theta, t, side);
        let base = match &self.family {
            Family::LinearDrift => T::one(),
            Family::Sgn => T::zero(),
            Family::PowerSgn { kappa } => {
                let d = (t - theta).abs();
                if d == T::zero() && *kappa < T::one() {
                    return Err(self.not_differentiable(theta, t));
                }
                *kappa * d.powf(*kappa - T::one())
            }
            Family::Cusp { amplitude, kappa } => {
                let d = (t - theta).abs();
                if d == T::zero() {
                    return Err(self.not_differentiable(theta, t));
                }
                *amplitude * *kappa * sgn(t - theta) * d.powf(*kappa - T::one())
            }
            Family::StepHg { h, g } => {
                if before {
                    h.derivative(t)
                } else {
                    g.derivative(t)
                }
            }
            Family::Sine { amplitude, omega } => *amplitude * *omega * (*omega * t - theta).cos(),
        };
        Ok(base + self.perturbation_dt(before, t))
    }

    fn not_differentiable(&self, theta: T, t: T) -> Error {
        Error::NotDifferentiable {
            theta: theta.to_f64_lossy(),
            t: t.to_f64_lossy(),
        }
    }

    /// `∂_θ M(θ, t)`.
    pub fn dtheta(&self, theta: T, t: T) -> Result<T> {
        let at_jump = t == theta;
        if at_jump && self.may_jump() {
            return Err(self.not_differentiable(theta, t));
        }
        match &self.family {
            Family::LinearDrift => Ok(-T::one()),
            Family::Sgn | Family::StepHg { .. } => Ok(T::zero()),
            Family::PowerSgn { kappa } => {
                if at_jump {
                    return if *kappa > T::one() {
                        Ok(T::zero())
                    } else if *kappa == T::one() {
                        Ok(-T::one())
                    } else {
                        Err(self.not_differentiable(theta, t))
                    };
                }
                Ok(-*kappa * (t - theta).abs().powf(*kappa - T::one()))
            }
            Family::Cusp { amplitude, kappa } => {
                if at_jump {
                    return Err(self.not_differentiable(theta, t));
                }
                Ok(-*amplitude * *kappa * sgn(t - theta) * (t - theta).abs().powf(*kappa - T::one()))
            }
            Family::Sine { amplitude, omega } => Ok(-*amplitude * (*omega * t - theta).cos()),
        }
    }

    /// `∂²_θ M(θ, t)`.
    pub fn d2theta(&self, theta: T, t: T) -> Result<T> {
        let at_jump = t == theta;
        if at_jump && self.may_jump() {
            return Err(self.not_differentiable(theta, t));
        }
        match &self.family {
            Family::LinearDrift | Family::Sgn | Family::StepHg { .. } => Ok(T::zero()),
            Family::PowerSgn { kappa } => {
                let two = T::lit(2.0);
                if at_jump {
                    return if *kappa == T::one() || *kappa > two {
                        Ok(T::zero())
                    } else {
                        Err(self.not_differentiable(theta, t))
                    };
                }
                let d = t - theta;
                Ok(*kappa * (*kappa - T::one()) * sgn(d) * d.abs().powf(*kappa - two))
            }
            Family::Cusp { amplitude, kappa } => {
                if at_jump {
                    return Err(self.not_differentiable(theta, t));
                }
                let d = (t - theta).abs();
                Ok(*amplitude * *kappa * (*kappa - T::one()) * d.powf(*kappa - T::lit(2.0)))
            }
            Family::Sine { amplitude, omega } => Ok(-*amplitude * (*omega * t - theta).sin()),
        }
    }

    /// Points where `t ↦ M(θ, t)` may jump or lose smoothness.
    pub fn breakpoints(&self, theta: T) -> [T; 1] {
        [theta]
    }
}

/// Checked evaluation: validates the spec first.
pub fn eval_signal<T: Real>(spec: &SignalSpec<T>, theta: T, t: T) -> Result<T> {
    spec.validate()?;
    Ok(spec.eval(theta, t))
}

/// Checked `∂_θ M(θ, t)`.
pub fn signal_dtheta<T: Real>(spec: &SignalSpec<T>, theta: T, t: T) -> Result<T> {
    spec.validate()?;
    spec.dtheta(theta, t)
}

/// Central finite difference of `θ ↦ M(θ, t)` with step `h`.
pub fn fd_dtheta<T: Real>(spec: &SignalSpec<T>, theta: T, t: T, h: T) -> T {
    (spec.eval(theta + h, t) - spec.eval(theta - h, t)) / (T::lit(2.0) * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn power_sgn_kappa_one_is_signed_distance() {
        let s = SignalSpec::<f64>::power_sgn(1.0);
        assert_abs_diff_eq!(s.eval(0.5, 0.75), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn step_branches_follow_jump() {
        let s = SignalSpec::<f64>::step(TimeFn::constant(1.0), TimeFn::constant(-1.0));
        assert_eq!(s.eval(0.5, 0.25), 1.0);
        assert_eq!(s.eval(0.5, 0.75), -1.0);
        assert_eq!(s.eval(0.5, 0.5), -1.0);
        assert_eq!(s.eval_sided(0.5, 0.5, Side::Left), 1.0);
    }

    #[test]
    fn sgn_is_right_continuous() {
        let s = SignalSpec::<f64>::sgn();
        assert_eq!(s.eval(0.4, 0.4), 1.0);
        assert_eq!(s.eval(0.4, 0.3), -1.0);
        assert_eq!(s.branches(0.1).unwrap(), (-1.0, 1.0));
    }

    #[test]
    fn linear_drift_zero_crossing() {
        let s = SignalSpec::<f64>::linear_drift();
        assert_eq!(s.eval(0.3, 0.3), 0.0);
        assert_eq!(s.dtheta(0.7, 0.1).unwrap(), -1.0);
    }

    #[test]
    fn sine_derivative_closed_form() {
        let s = SignalSpec::<f64>::sine(1.7, 2.0);
        let (theta, t) = (0.4, 1.3);
        assert_abs_diff_eq!(
            s.dtheta(theta, t).unwrap(),
            -1.7 * (2.0 * t - theta).cos(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn power_sgn_kappa_two_derivative_matches_finite_difference() {
        let s = SignalSpec::<f64>::power_sgn(2.0);
        let fd = fd_dtheta(&s, 0.0, 1.0, 1e-6);
        assert_relative_eq!(fd, -2.0, max_relative = 1e-5);
        assert_relative_eq!(s.dtheta(0.0, 1.0).unwrap(), -2.0);
    }

    #[test]
    fn cusp_exponent_range_enforced() {
        assert!(SignalSpec::<f64>::cusp(1.0, 0.25).validate().is_ok());
        assert!(matches!(
            eval_signal(&SignalSpec::<f64>::cusp(1.0, 0.5), 0.5, 0.1),
            Err(Error::InvalidSpec(_))
        ));
        assert!(SignalSpec::<f64>::power_sgn(0.0).validate().is_err());
    }

    #[test]
    fn change_point_not_differentiable_at_jump() {
        let s = SignalSpec::<f64>::sgn();
        assert!(matches!(
            signal_dtheta(&s, 0.5, 0.5),
            Err(Error::NotDifferentiable { .. })
        ));
        assert_eq!(s.dtheta(0.5, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn perturbations_apply_on_their_side() {
        let s = SignalSpec::<f64>::step(TimeFn::constant(1.0), TimeFn::constant(-1.0))
            .with_perturbations(Some(TimeFn::constant(0.4)), Some(TimeFn::constant(-0.4)));
        assert_abs_diff_eq!(s.eval(0.5, 0.2), 1.4);
        assert_abs_diff_eq!(s.eval(0.5, 0.7), -1.4);
    }

    #[test]
    fn time_fn_poly_and_derivative() {
        let p = TimeFn::Poly {
            poly: vec![1.0_f64, -2.0, 3.0],
        };
        assert_abs_diff_eq!(p.value(2.0), 1.0 - 4.0 + 12.0);
        assert_abs_diff_eq!(p.derivative(2.0), -2.0 + 12.0);
    }

    #[test]
    fn serde_tags_round_trip() {
        let s = SignalSpec::<f64>::step(TimeFn::constant(0.8), TimeFn::Poly { poly: vec![-1.0, 0.3] })
            .with_perturbations(Some(TimeFn::constant(0.1)), None);
        let js = serde_json::to_string(&s).unwrap();
        assert!(js.contains("\"family\":\"step-hg\""));
        let back: SignalSpec<f64> = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        let c: SignalSpec<f64> = serde_json::from_str(r#"{"family":"cusp","amplitude":1.0,"kappa":0.25}"#).unwrap();
        assert_eq!(c, SignalSpec::cusp(1.0, 0.25));
    }

    #[test]
    fn f32_evaluation_agrees() {
        let s = SignalSpec::<f32>::sine(1.0, 1.0);
        let d = SignalSpec::<f64>::sine(1.0, 1.0);
        assert!((s.eval(0.3, 0.9) as f64 - d.eval(0.3, 0.9)).abs() < 1e-6);
    }

    fn smooth_specs() -> Vec<SignalSpec<f64>> {
        vec![
            SignalSpec::linear_drift(),
            SignalSpec::sine(1.3, 2.0),
            SignalSpec::power_sgn(1.5),
            SignalSpec::power_sgn(2.5),
            SignalSpec::cusp(0.7, 0.3),
        ]
    }

    proptest! {
        #[test]
        fn analytic_dtheta_matches_finite_difference(theta in 0.1..0.9_f64, t in 0.0..1.0_f64, which in 0usize..5) {
            prop_assume!((t - theta).abs() > 1e-2);
            let spec = &smooth_specs()[which];
            let exact = spec.dtheta(theta, t).unwrap();
            let fd = fd_dtheta(spec, theta, t, 1e-6);
            prop_assert!((exact - fd).abs() <= 1e-5 * exact.abs().max(1.0));
        }

        #[test]
        fn analytic_d2theta_matches_finite_difference(theta in 0.1..0.9_f64, t in 0.0..1.0_f64, which in 0usize..5) {
            prop_assume!((t - theta).abs() > 5e-2);
            let spec = &smooth_specs()[which];
            let h = 1e-5;
            let fd = (spec.dtheta(theta + h, t).unwrap() - spec.dtheta(theta - h, t).unwrap()) / (2.0 * h);
            let exact = spec.d2theta(theta, t).unwrap();
            prop_assert!((exact - fd).abs() <= 1e-4 * exact.abs().max(1.0));
        }
    }
}
