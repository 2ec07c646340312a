//! Deterministic functionals of a (truth, assumed) pair: the Kullback-Leibler distance `Φ`,
//! its minimizer, curvatures, Fisher information and the quadratic minorant constant.

use serde::{Deserialize, Serialize};

use crate::error::{BoundarySide, Error, Result};
use crate::grid::{linspace, panel_integrals, trapezoid_with_breaks, ParamWindow, Side, TimeGrid};
use crate::optimize::{argmin, refine_min};
use crate::scalar::Real;
use crate::signal::{Family, SignalSpec, TimeFn};

/// Number of points in the `θ` tabulation and smooth coarse scan.
pub const SCAN_POINTS: usize = 512;

/// Steps of the second-difference curvature oracle.
pub const CURVATURE_STEP: f64 = 1e-3;
pub const CURVATURE_STEP_COARSE: f64 = 1e-2;

/// Relative disagreement between the two oracle steps above which `Φ` is declared non-quadratic.
pub const NON_QUADRATIC_SPREAD: f64 = 0.2;

/// `Φ(θ) = ∫ [M(θ,t) − S(θ0,t)]² dt`, jump-aware trapezoid with breakpoints at `θ` and `θ0`.
pub fn phi<T: Real>(assumed: &SignalSpec<T>, truth: &SignalSpec<T>, theta0: T, theta: T, grid: &TimeGrid<T>) -> T {
    trapezoid_with_breaks(grid, &[theta, theta0], |t, side| {
        let d = assumed.eval_sided(theta, t, side) - truth.eval_sided(theta0, t, side);
        d * d
    })
}

/// `dΦ/dθ` where it exists in closed form: jump formula for change-point models,
/// `2∫Ṁ(M−S)` for models smooth in `θ`. `None` otherwise.
pub fn phi_derivative<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    theta: T,
    grid: &TimeGrid<T>,
) -> Option<T> {
    if assumed.is_change_point() {
        let (h, g) = assumed.branches(theta).ok()?;
        let s = truth.eval(theta0, theta);
        Some((h - s) * (h - s) - (g - s) * (g - s))
    } else if smooth_in_theta(assumed) {
        let mut failed = false;
        let v = trapezoid_with_breaks(grid, &[theta, theta0], |t, side| match assumed.dtheta(theta, t) {
            Ok(d) => d * (assumed.eval_sided(theta, t, side) - truth.eval_sided(theta0, t, side)),
            Err(_) => {
                failed = true;
                T::zero()
            }
        });
        (!failed).then(|| T::lit(2.0) * v)
    } else {
        None
    }
}

/// Models whose `θ`-derivative is bounded on the whole time interval.
pub fn smooth_in_theta<T: Real>(spec: &SignalSpec<T>) -> bool {
    if spec.may_jump() {
        return false;
    }
    match &spec.family {
        Family::LinearDrift | Family::Sine { .. } => true,
        Family::PowerSgn { kappa } => *kappa >= T::one(),
        _ => false,
    }
}

/// Second-difference oracle `(Φ(θ+h) − 2Φ(θ) + Φ(θ−h)) / h²`.
pub fn phi_second_difference<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    theta: T,
    h: T,
    grid: &TimeGrid<T>,
) -> T {
    let f = |x| phi(assumed, truth, theta0, x, grid);
    (f(theta + h) - T::lit(2.0) * f(theta) + f(theta - h)) / (h * h)
}

/// Minimizer of `Φ` over the window.
///
/// Change-point models are scanned at every time-grid node inside `[α+Δ, β−Δ]` (exact
/// cumulative sums); other models at [`SCAN_POINTS`] equispaced points. The best scan point is
/// refined inside its two neighbouring cells.
pub fn kl_minimizer<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
) -> Result<T> {
    let (thetas, values) = if assumed.is_change_point() {
        change_point_scan(assumed, truth, theta0, window, grid)?
    } else {
        let thetas = window.scan_points(grid, SCAN_POINTS);
        let values = thetas.iter().map(|&th| phi(assumed, truth, theta0, th, grid)).collect();
        (thetas, values)
    };
    if thetas.len() < 3 {
        return Err(Error::InvalidInput(
            "parameter window holds fewer than 3 scan points".into(),
        ));
    }
    let k = argmin(&values).ok_or_else(|| Error::Degenerate("Φ is NaN on the whole window".into()))?;
    let vk = values[k];
    let tie = T::lit(1e-12) * vk.abs().max(T::one());
    if let Some(j) = values
        .iter()
        .enumerate()
        .position(|(j, &v)| j.abs_diff(k) > 1 && v - vk <= tie)
    {
        return Err(Error::NonUniqueMinimizer {
            first: thetas[k.min(j)].to_f64_lossy(),
            second: thetas[k.max(j)].to_f64_lossy(),
        });
    }
    let last = thetas.len() - 1;
    if k == 0 || k == last {
        let side = if k == 0 {
            BoundarySide::Lower
        } else {
            BoundarySide::Upper
        };
        return Err(Error::BoundaryMinimizer {
            side,
            theta: thetas[k].to_f64_lossy(),
        });
    }

    let (lo, hi) = (thetas[k - 1], thetas[k + 1]);
    let f = |th: T| phi(assumed, truth, theta0, th, grid);
    let df = |th: T| phi_derivative(assumed, truth, theta0, th, grid).unwrap_or(T::nan());
    let has_derivative = phi_derivative(assumed, truth, theta0, thetas[k], grid).is_some();
    let refined = refine_min(f, has_derivative.then_some(df), lo, hi, window.tol_theta());
    // keep the scan point if refinement went astray
    if f(refined) <= vk + tie {
        Ok(refined)
    } else {
        Ok(thetas[k])
    }
}

fn change_point_scan<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let before = panel_integrals(grid, &[theta0], |t, side| {
        let d = assumed.branches(t).map(|b| b.0).unwrap_or(T::nan()) - truth.eval_sided(theta0, t, side);
        d * d
    });
    let after = panel_integrals(grid, &[theta0], |t, side| {
        let d = assumed.branches(t).map(|b| b.1).unwrap_or(T::nan()) - truth.eval_sided(theta0, t, side);
        d * d
    });
    let total_after: T = after.iter().copied().sum();
    let lo = window.lower + grid.dt();
    let hi = window.upper - grid.dt();
    let mut thetas = Vec::new();
    let mut values = Vec::new();
    let mut acc_before = T::zero();
    let mut acc_after = T::zero();
    for i in 0..=grid.steps {
        if i > 0 {
            acc_before += before[i - 1];
            acc_after += after[i - 1];
        }
        let t = grid.node(i);
        if t >= lo && t <= hi {
            thetas.push(t);
            values.push(acc_before + (total_after - acc_after));
        }
    }
    Ok((thetas, values))
}

/// `2[h−S][h'−S'] − 2[g−S][g'−S']` at `θ`, the second derivative of `Φ` for a change-point
/// model away from any jump of the truth.
pub fn curvature_cp<T: Real>(assumed: &SignalSpec<T>, truth: &SignalSpec<T>, theta0: T, theta: T) -> Result<T> {
    if !assumed.is_change_point() {
        return Err(Error::NotApplicable("change-point curvature"));
    }
    if truth.may_jump() && theta == theta0 {
        return Err(Error::NotDifferentiable {
            theta: theta.to_f64_lossy(),
            t: theta.to_f64_lossy(),
        });
    }
    let (h, g) = assumed.branches(theta)?;
    let (dh, dg) = assumed.branch_derivatives(theta)?;
    let s = truth.eval(theta0, theta);
    let ds = truth.dt(theta0, theta, Side::Right)?;
    let two = T::lit(2.0);
    let value = two * (h - s) * (dh - ds) - two * (g - s) * (dg - ds);
    if value > T::zero() {
        Ok(value)
    } else {
        Err(Error::ConditionViolated {
            condition: "positive change-point curvature",
            value: value.to_f64_lossy(),
        })
    }
}

/// `∫Ṁ(θ,t)² dt + ∫M̈(θ,t)[M(θ,t) − S(θ0,t)] dt`: the `u²` coefficient of the
/// log-likelihood expansion for models smooth in `θ` (half the second derivative of `Φ`).
pub fn curvature_smooth<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    theta: T,
    grid: &TimeGrid<T>,
) -> Result<T> {
    if assumed.is_change_point() {
        return Err(Error::NotApplicable("smooth curvature"));
    }
    let mut err = None;
    let value = trapezoid_with_breaks(grid, &[theta, theta0], |t, side| {
        let d1 = assumed.dtheta(theta, t);
        let d2 = assumed.d2theta(theta, t);
        match (d1, d2) {
            (Ok(d1), Ok(d2)) => d1 * d1 + d2 * (assumed.eval_sided(theta, t, side) - truth.eval_sided(theta0, t, side)),
            (Err(e), _) | (_, Err(e)) => {
                err.get_or_insert(e);
                T::zero()
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if value > T::zero() {
        Ok(value)
    } else {
        Err(Error::ConditionViolated {
            condition: "positive smooth curvature",
            value: value.to_f64_lossy(),
        })
    }
}

/// Fisher information `∫Ṁ(θ,t)² dt` of the assumed model.
pub fn fisher_info<T: Real>(assumed: &SignalSpec<T>, theta: T, grid: &TimeGrid<T>) -> Result<T> {
    if assumed.is_change_point() {
        return Err(Error::NotApplicable("Fisher information"));
    }
    let mut err = None;
    let value = trapezoid_with_breaks(grid, &[theta], |t, _| match assumed.dtheta(theta, t) {
        Ok(d) => d * d,
        Err(e) => {
            err.get_or_insert(e);
            T::zero()
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// `S(θ0, θ̂) − (h(θ̂) + g(θ̂))/2`; at a jump of the truth the midpoint of its one-sided limits is used.
pub fn necessary_condition_residual<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    theta_hat: T,
) -> Result<T> {
    let (h, g) = assumed.branches(theta_hat)?;
    let half = T::lit(0.5);
    let s = half * (truth.eval_sided(theta0, theta_hat, Side::Left) + truth.eval_sided(theta0, theta_hat, Side::Right));
    Ok(s - half * (h + g))
}

/// Outcome of the perturbation conditions `q > (g−h)/2` and `r < (h−g)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConsistencyCheck<T: Real> {
    /// `min_t [q(t) − (g(t)−h(t))/2]`
    pub q_margin: T,
    /// `min_t [(h(t)−g(t))/2 − r(t)]`
    pub r_margin: T,
    pub q_holds: bool,
    pub r_holds: bool,
    pub verdict: bool,
}

/// Checks both perturbation conditions at every grid node in `[α, β]`.
pub fn check_perturbation_conditions<T: Real>(
    h: &TimeFn<T>,
    g: &TimeFn<T>,
    q: Option<&TimeFn<T>>,
    r: Option<&TimeFn<T>>,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
) -> Result<ConsistencyCheck<T>> {
    let half = T::lit(0.5);
    let mut q_margin = T::infinity();
    let mut r_margin = T::infinity();
    for t in grid.nodes() {
        if t < window.lower || t > window.upper {
            continue;
        }
        let jump = h.value(t) - g.value(t);
        if !(jump > T::zero()) {
            return Err(Error::AssumptionViolated(format!(
                "h - g must be positive on the window, got {jump} at t={t}"
            )));
        }
        let qv = q.map_or(T::zero(), |f| f.value(t));
        let rv = r.map_or(T::zero(), |f| f.value(t));
        q_margin = q_margin.min(qv + half * jump);
        r_margin = r_margin.min(half * jump - rv);
    }
    let q_holds = q_margin > T::zero();
    let r_holds = r_margin > T::zero();
    Ok(ConsistencyCheck {
        q_margin,
        r_margin,
        q_holds,
        r_holds,
        verdict: q_holds && r_holds,
    })
}

/// Whether `Φ` is locally quadratic at its minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureRegime {
    Quadratic,
    NonQuadratic,
}

/// Largest `κ = min(m(ν)/(β−α)², curvature/4)` found with `ν` halving from `(β−α)/10`
/// (at most 10 retries) such that `Φ(θ) − Φ(θ̂) ≥ κ(θ−θ̂)²` at every tabulated point.
pub fn minorant_kappa<T: Real>(
    thetas: &[T],
    values: &[T],
    theta_hat: T,
    phi_hat: T,
    curvature: T,
    window: &ParamWindow<T>,
) -> Result<T> {
    let width = window.width();
    let slack = T::lit(1e-12) * phi_hat.abs().max(T::one());
    let mut nu = width / T::lit(10.0);
    for _ in 0..=10 {
        let m = thetas
            .iter()
            .zip(values)
            .filter(|(th, _)| (**th - theta_hat).abs() >= nu)
            .map(|(_, &v)| v - phi_hat)
            .fold(T::infinity(), T::min);
        let kappa = (m / (width * width)).min(curvature / T::lit(4.0));
        if kappa > T::zero()
            && thetas.iter().zip(values).all(|(&th, &v)| {
                let d = th - theta_hat;
                v - phi_hat + slack >= kappa * d * d
            })
        {
            return Ok(kappa);
        }
        nu /= T::lit(2.0);
    }
    Err(Error::InternalConsistency(
        "quadratic minorant fails on the tabulation grid for every tried ν".into(),
    ))
}

/// Everything deterministic the Monte Carlo layer needs about a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DeterministicProfile<T: Real> {
    #[serde(skip)]
    pub scan_theta: Vec<T>,
    #[serde(skip)]
    pub scan_phi: Vec<T>,
    pub kl_minimizer: T,
    pub phi_min: T,
    /// Second-difference oracle of `Φ` at `h = 1e-3`.
    pub curvature_oracle: T,
    pub curvature_regime: CurvatureRegime,
    pub curvature_cp: Option<T>,
    pub curvature_smooth: Option<T>,
    pub jump: Option<T>,
    pub fisher: Option<T>,
    pub minorant_kappa: T,
    pub necessary_residual: Option<T>,
}

impl<T: Real> DeterministicProfile<T> {
    pub fn compute(
        assumed: &SignalSpec<T>,
        truth: &SignalSpec<T>,
        theta0: T,
        window: &ParamWindow<T>,
        grid: &TimeGrid<T>,
    ) -> Result<Self> {
        grid.validate()?;
        window.validate(grid)?;
        assumed.validate()?;
        truth.validate()?;

        let theta_hat = kl_minimizer(assumed, truth, theta0, window, grid)?;
        let phi_min = phi(assumed, truth, theta0, theta_hat, grid);
        let scan_theta = window.scan_points(grid, SCAN_POINTS);
        let scan_phi: Vec<T> = scan_theta
            .iter()
            .map(|&th| phi(assumed, truth, theta0, th, grid))
            .collect();
        let slack = T::lit(1e-12) * phi_min.abs().max(T::one());
        if let Some(bad) = scan_phi.iter().find(|&&v| v + slack < phi_min) {
            return Err(Error::InternalConsistency(format!(
                "tabulated Φ = {bad} undercuts Φ(θ̂) = {phi_min}"
            )));
        }

        let fine = phi_second_difference(assumed, truth, theta0, theta_hat, T::lit(CURVATURE_STEP), grid);
        let coarse = phi_second_difference(assumed, truth, theta0, theta_hat, T::lit(CURVATURE_STEP_COARSE), grid);
        let spread = (fine - coarse).abs() / fine.abs().max(coarse.abs());
        let curvature_regime = if fine > T::zero() && spread <= T::lit(NON_QUADRATIC_SPREAD) {
            CurvatureRegime::Quadratic
        } else {
            CurvatureRegime::NonQuadratic
        };

        let (curvature_cp, jump, necessary_residual) = if assumed.is_change_point() {
            let (h, g) = assumed.branches(theta_hat)?;
            let cp = match curvature_regime {
                CurvatureRegime::Quadratic => curvature_cp(assumed, truth, theta0, theta_hat).ok(),
                CurvatureRegime::NonQuadratic => None,
            };
            let residual = necessary_condition_residual(assumed, truth, theta0, theta_hat)?;
            (cp, Some(h - g), Some(residual))
        } else {
            (None, None, None)
        };
        let (curvature_smooth, fisher) = if smooth_in_theta(assumed) {
            (
                curvature_smooth(assumed, truth, theta0, theta_hat, grid).ok(),
                fisher_info(assumed, theta_hat, grid).ok(),
            )
        } else {
            (None, None)
        };

        let minorant_curvature = match curvature_regime {
            CurvatureRegime::Quadratic => fine,
            CurvatureRegime::NonQuadratic => {
                let spacing = scan_theta[1] - scan_theta[0];
                phi_second_difference(assumed, truth, theta0, theta_hat, spacing, grid)
            }
        };
        let minorant_kappa = minorant_kappa(&scan_theta, &scan_phi, theta_hat, phi_min, minorant_curvature, window)?;

        Ok(Self {
            scan_theta,
            scan_phi,
            kl_minimizer: theta_hat,
            phi_min,
            curvature_oracle: fine,
            curvature_regime,
            curvature_cp,
            curvature_smooth,
            jump,
            fisher,
            minorant_kappa,
            necessary_residual,
        })
    }

    /// Checks the minorant inequality at every tabulated point.
    pub fn minorant_holds(&self) -> bool {
        let slack = T::lit(1e-12) * self.phi_min.abs().max(T::one());
        self.scan_theta.iter().zip(&self.scan_phi).all(|(&th, &v)| {
            let d = th - self.kl_minimizer;
            v - self.phi_min + slack >= self.minorant_kappa * d * d
        })
    }
}

/// Tabulates `Φ` on `count` equispaced points inside the window.
pub fn phi_table<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
    count: usize,
) -> Vec<(T, T)> {
    linspace(window.lower, window.upper, count)
        .into_iter()
        .map(|th| (th, phi(assumed, truth, theta0, th, grid)))
        .collect()
}
