//! Limit laws: argmax of drifted two-sided Wiener processes, the Gaussian limit, and rate exponents.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ParamWindow, TimeGrid};
use crate::profile::{curvature_smooth, fisher_info, kl_minimizer};
use crate::rng::{derive_seed, stream_id, stream_rng, ROLE_LEFT, ROLE_RIGHT};
use crate::scalar::Real;
use crate::signal::SignalSpec;
use crate::stats::{ks_critical_two_sample, ks_two_sample};

/// Target probability that the argmax lies beyond the truncation.
const TAIL_TARGET: f64 = 1e-6;

/// Lattice points per unit of truncation, `U / η`.
pub const LATTICE_POINTS: usize = 1000;

/// Truncation hits (|û| > 0.9 U) allowed per sample, as a fraction.
pub const MAX_HIT_RATE: f64 = 1e-3;

/// Which drifted process is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", bound = "")]
pub enum ArgmaxKind<T: Real> {
    /// `δ W(u) − γ u²/2`
    Quadratic { delta: T, gamma: T },
    /// `W(u) − |u|^{1+κ}/(1+κ)`, `κ > 1/2`
    Power { kappa: T },
    /// `δ W(u) − δ²|u|/2`
    LinearCp { delta: T },
}

/// An argmax law together with its truncation `[−U, U]` and lattice step `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ArgmaxLawSpec<T: Real> {
    pub kind: ArgmaxKind<T>,
    pub truncation: T,
    pub step: T,
}

impl<T: Real> ArgmaxLawSpec<T> {
    /// Default truncation for the tail target and `η = U / 1000`.
    pub fn new(kind: ArgmaxKind<T>) -> Result<Self> {
        let ln_tail = T::lit(-TAIL_TARGET.ln());
        let truncation = match kind {
            ArgmaxKind::Quadratic { delta, gamma } => {
                // Gaussian tail with rate 1/8 in the standardized variable, scaled by (δ/γ)^{2/3}.
                check_positive(delta, "delta")?;
                check_positive(gamma, "gamma")?;
                (T::lit(8.0) * ln_tail).sqrt() * (delta / gamma).powf(T::lit(2.0 / 3.0))
            }
            ArgmaxKind::Power { kappa } => {
                check_power(kappa)?;
                let one_k = T::one() + kappa;
                let u = (T::lit(8.0) * one_k * one_k * ln_tail).powf(T::one() / (T::one() + T::lit(2.0) * kappa));
                u.max(T::lit(4.0))
            }
            ArgmaxKind::LinearCp { delta } => {
                check_positive(delta, "delta")?;
                T::lit(8.0) * ln_tail / (delta * delta)
            }
        };
        Ok(Self {
            kind,
            truncation,
            step: truncation / T::of_usize(LATTICE_POINTS),
        })
    }

    pub fn quadratic(delta: f64, gamma: f64) -> Result<Self> {
        Self::new(ArgmaxKind::Quadratic {
            delta: T::lit(delta),
            gamma: T::lit(gamma),
        })
    }

    pub fn power(kappa: f64) -> Result<Self> {
        Self::new(ArgmaxKind::Power { kappa: T::lit(kappa) })
    }

    pub fn linear_cp(delta: f64) -> Result<Self> {
        Self::new(ArgmaxKind::LinearCp { delta: T::lit(delta) })
    }

    /// Same law with lattice step `step`.
    pub fn with_step(mut self, step: T) -> Self {
        self.step = step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ArgmaxKind::Quadratic { delta, gamma } => {
                check_positive(delta, "delta")?;
                check_positive(gamma, "gamma")?;
            }
            ArgmaxKind::Power { kappa } => check_power(kappa)?,
            ArgmaxKind::LinearCp { delta } => check_positive(delta, "delta")?,
        }
        check_positive(self.truncation, "truncation")?;
        check_positive(self.step, "lattice step")?;
        if self.step > T::lit(1e-3) * self.truncation * (T::one() + T::lit(1e-9)) {
            return Err(Error::InvalidSpec(format!(
                "lattice step {} exceeds 1e-3 of the truncation {}",
                self.step, self.truncation
            )));
        }
        Ok(())
    }

    fn noise_scale(&self) -> T {
        match self.kind {
            ArgmaxKind::Quadratic { delta, .. } | ArgmaxKind::LinearCp { delta } => delta,
            ArgmaxKind::Power { .. } => T::one(),
        }
    }

    fn drift(&self, u: T) -> T {
        let u = u.abs();
        match self.kind {
            ArgmaxKind::Quadratic { gamma, .. } => gamma * u * u / T::lit(2.0),
            ArgmaxKind::Power { kappa } => u.powf(T::one() + kappa) / (T::one() + kappa),
            ArgmaxKind::LinearCp { delta } => delta * delta * u / T::lit(2.0),
        }
    }
}

fn check_positive<T: Real>(x: T, what: &str) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!(
            "{what} must be positive and finite, got {x}"
        )))
    }
}

fn check_power<T: Real>(kappa: T) -> Result<()> {
    if kappa > T::lit(0.5) && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!(
            "power-law exponent must exceed 1/2, got {kappa}"
        )))
    }
}

/// Argmax draws and how many landed beyond `0.9 U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxSample<T: Real> {
    pub values: Vec<T>,
    pub truncation_hits: usize,
}

impl<T: Real> ArgmaxSample<T> {
    pub fn hit_rate(&self) -> f64 {
        self.truncation_hits as f64 / self.values.len().max(1) as f64
    }
}

/// Draws `count` argmax locations. Sample `i` uses two independent streams, one per side
/// of the origin; ties go to the smallest `u`.
pub fn sample_argmax<T: Real>(spec: &ArgmaxLawSpec<T>, seed: u64, count: usize) -> Result<ArgmaxSample<T>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let steps = (spec.truncation / spec.step).ceil().to_usize().unwrap_or(0).max(1);
    let drift: Vec<T> = (0..=steps).map(|j| spec.drift(T::of_usize(j) * spec.step)).collect();
    let sd = spec.noise_scale() * spec.step.sqrt();
    let values: Vec<T> = (0..count)
        .into_par_iter()
        .map(|i| {
            let (right_j, right_v) = one_side(&drift, sd, seed, stream_id(i as u64, ROLE_RIGHT), false);
            let (left_j, left_v) = one_side(&drift, sd, seed, stream_id(i as u64, ROLE_LEFT), true);
            if left_j > 0 && left_v >= right_v {
                -T::of_usize(left_j) * spec.step
            } else {
                T::of_usize(right_j) * spec.step
            }
        })
        .collect();
    let limit = T::lit(0.9) * spec.truncation;
    let truncation_hits = values.iter().filter(|v| v.abs() > limit).count();
    let allowed: f64 = MAX_HIT_RATE * (count as f64);
    if truncation_hits > 0 && (truncation_hits as f64) >= allowed {
        return Err(Error::TruncationTooSmall {
            hits: truncation_hits,
            count,
        });
    }
    Ok(ArgmaxSample {
        values,
        truncation_hits,
    })
}

/// Walks `j = 0..=steps`; returns the index of the maximum (smallest `u` on ties) and its value.
fn one_side<T: Real>(drift: &[T], sd: T, seed: u64, stream: u64, left: bool) -> (usize, T) {
    let mut rng = stream_rng(seed, stream);
    let mut w = T::zero();
    let (mut best_j, mut best_v) = (0, T::zero());
    for (j, &d) in drift.iter().enumerate().skip(1) {
        w += sd * T::standard_normal(&mut rng);
        let v = w - d;
        // on the left, larger j means smaller u
        if v > best_v || (left && v == best_v) {
            best_j = j;
            best_v = v;
        }
    }
    (best_j, best_v)
}

/// Result of a two-sample distributional comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsCheck {
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Two-sample KS between `Quadratic(δ, γ)` draws and `(δ/γ)^{2/3}`-scaled `Quadratic(1, 1)` draws;
/// passes below 1.5 times the 99% critical value.
///
/// The direct lattice is the unit lattice scaled by `(δ/γ)^{2/3}`, so both samples are compared
/// as lattice indices. Comparing the scaled floats would split exact ties by a few ulps.
pub fn quadratic_scaling_check(delta: f64, gamma: f64, seed: u64, count: usize) -> Result<KsCheck> {
    let direct_spec = ArgmaxLawSpec::<f64>::quadratic(delta, gamma)?;
    let unit_spec = ArgmaxLawSpec::<f64>::quadratic(1.0, 1.0)?;
    let direct = sample_argmax(&direct_spec, derive_seed(seed, 0), count)?;
    let unit = sample_argmax(&unit_spec, derive_seed(seed, 1), count)?;
    let r = (delta / gamma).powf(2.0 / 3.0);
    let lattice_ratio = direct_spec.step / unit_spec.step;
    if (lattice_ratio / r - 1.0).abs() > 1e-9 {
        return Err(Error::InternalConsistency(format!(
            "lattice ratio {lattice_ratio} differs from the scale factor {r}"
        )));
    }
    let index = |v: &[f64], step: f64| -> Vec<f64> { v.iter().map(|x| (x / step).round()).collect() };
    let statistic = ks_two_sample(
        &index(&direct.values, direct_spec.step),
        &index(&unit.values, unit_spec.step),
    )?;
    let threshold = 1.5 * ks_critical_two_sample(0.01, count, count);
    Ok(KsCheck {
        statistic,
        threshold,
        pass: statistic <= threshold,
    })
}

/// `N(0, D²)` limit of `(θ̂_ε − θ̂)/ε` for smooth assumed models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GaussianLimit<T: Real> {
    pub variance: T,
}

impl<T: Real> GaussianLimit<T> {
    pub fn sd(&self) -> T {
        self.variance.sqrt()
    }
}

/// `D² = I(θ̂) / c(θ̂)²` with `c` the smooth curvature.
pub fn gaussian_limit<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
) -> Result<GaussianLimit<T>> {
    let theta_hat = kl_minimizer(assumed, truth, theta0, window, grid)?;
    gaussian_limit_at(assumed, truth, theta0, theta_hat, grid)
}

/// Same as [`gaussian_limit`] with the minimizer already known.
pub fn gaussian_limit_at<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    theta_hat: T,
    grid: &TimeGrid<T>,
) -> Result<GaussianLimit<T>> {
    let info = fisher_info(assumed, theta_hat, grid)?;
    let curv = curvature_smooth(assumed, truth, theta0, theta_hat, grid)?;
    let variance = info / (curv * curv);
    if variance > T::zero() {
        Ok(GaussianLimit { variance })
    } else {
        Err(Error::ConditionViolated {
            condition: "positive limit variance",
            value: variance.to_f64_lossy(),
        })
    }
}

/// Asymptotic regime of a (truth, assumed) pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    /// Both smooth, correctly specified: rate `ε`, standard normal limit.
    Regular,
    /// Smooth model, discontinuous truth: rate `ε`, Gaussian limit.
    SmoothVsDisc,
    /// Change-point model, smooth truth: rate `ε^{2/3}`.
    DiscVsSmooth,
    /// Change-point model and truth: rate `ε²`.
    DiscVsDisc,
    /// Change-point model, power-sgn truth with exponent `κ`: rate `ε^{2/(2κ+1)}`.
    PowerFamily { kappa: Ratio<i64> },
    /// Cusp model with exponent `κ`, smooth truth: rate `ε^{2/(3−2κ)}`.
    CuspVsSmooth { kappa: Ratio<i64> },
}

/// Exact rate exponent `ρ` with `(θ̂_ε − θ̂)/ε^ρ` non-degenerate.
pub fn rate_exponent(regime: &Regime) -> Ratio<i64> {
    let two = Ratio::from_integer(2);
    let one = Ratio::from_integer(1);
    match regime {
        Regime::Regular | Regime::SmoothVsDisc => one,
        Regime::DiscVsSmooth => Ratio::new(2, 3),
        Regime::DiscVsDisc => two,
        Regime::PowerFamily { kappa } => two / (two * kappa + one),
        Regime::CuspVsSmooth { kappa } => two / (Ratio::from_integer(3) - two * kappa),
    }
}

/// Parses a regime tag and returns its rate exponent.
pub fn rate_exponent_tag(tag: &str) -> Result<Ratio<i64>> {
    Ok(rate_exponent(&tag.parse()?))
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Parses `"3/2"`, `"1.5"` or `"2"` exactly.
pub fn parse_ratio(s: &str) -> Option<Ratio<i64>> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().ok()?;
        let d: i64 = d.trim().parse().ok()?;
        return (d != 0).then(|| Ratio::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 15 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let negative = int.starts_with('-');
        let int: i64 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().ok()?
        };
        let den = 10_i64.checked_pow(frac.len() as u32)?;
        let frac: i64 = frac.parse().ok()?;
        let magnitude = int.abs().checked_mul(den)?.checked_add(frac)?;
        let num = if negative || int < 0 { -magnitude } else { magnitude };
        return Some(Ratio::new(num, den));
    }
    s.parse::<i64>().ok().map(Ratio::from_integer)
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Regular => f.write_str("regular"),
            Regime::SmoothVsDisc => f.write_str("smooth-vs-disc"),
            Regime::DiscVsSmooth => f.write_str("disc-vs-smooth"),
            Regime::DiscVsDisc => f.write_str("disc-vs-disc"),
            Regime::PowerFamily { kappa } => write!(f, "power-family:{kappa}"),
            Regime::CuspVsSmooth { kappa } => write!(f, "cusp-vs-smooth:{kappa}"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownRegime(s.to_string());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let kappa = || arg.and_then(parse_ratio).ok_or_else(unknown);
        match (head, arg.is_some()) {
            ("regular", false) => Ok(Regime::Regular),
            ("smooth-vs-disc", false) => Ok(Regime::SmoothVsDisc),
            ("disc-vs-smooth", false) => Ok(Regime::DiscVsSmooth),
            ("disc-vs-disc", false) => Ok(Regime::DiscVsDisc),
            ("power-family", true) => {
                let k = kappa()?;
                if k <= Ratio::from_integer(0) {
                    return Err(unknown());
                }
                Ok(Regime::PowerFamily { kappa: k })
            }
            ("cusp-vs-smooth", true) => {
                let k = kappa()?;
                if k <= Ratio::from_integer(0) || k >= Ratio::new(1, 2) {
                    return Err(unknown());
                }
                Ok(Regime::CuspVsSmooth { kappa: k })
            }
            _ => Err(unknown()),
        }
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> Self {
        r.to_string()
    }
}
