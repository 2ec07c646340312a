//! Pseudo-likelihood, pseudo-MLE, Bayesian and trajectory-fitting estimators on a discretized path.
//!
//! Objectives are handled in `ε²`-scaled form, `ℓ(θ) = ε² log L(θ) = Σ M(θ,t_i) ΔX_i − ½∫M(θ,t)² dt`,
//! so they stay finite as `ε → 0`. The `dt` integral is a cellwise trapezoid in which each cell
//! uses the branch of `M` active at its left node; for change-point models this makes `ℓ`
//! exactly constant for `θ` inside a grid cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cumulative_trapezoid_with_breaks, ParamWindow, TimeGrid};
use crate::observation::ObservationPath;
use crate::optimize::{argmax, argmin, brent_root, golden_section_min};
use crate::profile::{kl_minimizer, smooth_in_theta, SCAN_POINTS};
use crate::scalar::Real;
use crate::signal::SignalSpec;

/// Upper bound on the number of stored `M(θ_k, t_i)` values for the smooth coarse scan.
pub const PLAN_TABLE_LIMIT: usize = 1 << 24;

/// Number of `θ` nodes in the smooth-model Bayesian quadrature.
pub const BAYES_NODES: usize = 4096;

/// Largest number of panels used by the trajectory-fitting objective.
pub const TFE_MAX_PANELS: usize = 4096;

/// Log-weights below this (relative to the maximum) are dropped.
const EXP_FLOOR: f64 = -700.0;

/// `ℓ(θ)` for the given increments `ΔX_i` (scaled by `ε²`; valid at `ε = 0`).
pub fn scaled_log_lr<T: Real>(assumed: &SignalSpec<T>, theta: T, grid: &TimeGrid<T>, increments: &[T]) -> T {
    let half_dt = grid.dt() / T::lit(2.0);
    let half = T::lit(0.5);
    let mut ito = T::zero();
    let mut quad = T::zero();
    for (i, &dx) in increments.iter().enumerate() {
        let a = grid.node(i);
        let b = grid.node(i + 1);
        let (m_a, m_b) = if assumed.is_change_point() {
            let (h0, g0) = assumed.branches(a).unwrap_or((T::nan(), T::nan()));
            let (h1, g1) = assumed.branches(b).unwrap_or((T::nan(), T::nan()));
            if a < theta {
                (h0, h1)
            } else {
                (g0, g1)
            }
        } else {
            (assumed.eval(theta, a), assumed.eval(theta, b))
        };
        ito += m_a * dx;
        quad += half_dt * (m_a * m_a + m_b * m_b);
    }
    ito - half * quad
}

/// `log L(θ) = ε⁻² ℓ(θ)`.
pub fn log_pseudo_lr<T: Real>(assumed: &SignalSpec<T>, theta: T, path: &ObservationPath<T>) -> Result<T> {
    if !(path.eps > T::zero()) {
        return Err(Error::InvalidInput(
            "log-likelihood ratio needs eps > 0; at eps = 0 use the noiseless objective -Φ".into(),
        ));
    }
    let inc = path.increments();
    Ok(scaled_log_lr(assumed, theta, &path.grid, &inc) / (path.eps * path.eps))
}

/// `m(θ, t_i) = ∫_0^{t_i} M(θ, s) ds` at every grid node.
pub fn m_cumulative<T: Real>(assumed: &SignalSpec<T>, theta: T, grid: &TimeGrid<T>) -> Vec<T> {
    cumulative_trapezoid_with_breaks(grid, &[theta], |t, side| assumed.eval_sided(theta, t, side))
}

/// Prior density on the window. `scale` multiplies the density and cancels in the posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Prior<T: Real> {
    pub density: PriorDensity<T>,
    pub scale: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "")]
pub enum PriorDensity<T: Real> {
    Uniform,
    /// Piecewise-linear through `(theta[j], value[j])`, constant beyond the ends.
    Tabulated {
        theta: Vec<T>,
        value: Vec<T>,
    },
}

impl<T: Real> Default for Prior<T> {
    fn default() -> Self {
        Self::uniform()
    }
}

impl<T: Real> Prior<T> {
    pub fn uniform() -> Self {
        Self {
            density: PriorDensity::Uniform,
            scale: T::one(),
        }
    }

    pub fn tabulated(theta: Vec<T>, value: Vec<T>) -> Result<Self> {
        let prior = Self {
            density: PriorDensity::Tabulated { theta, value },
            scale: T::one(),
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > T::zero()) {
            return Err(Error::InvalidInput("prior scale must be positive".into()));
        }
        if let PriorDensity::Tabulated { theta, value } = &self.density {
            if theta.len() != value.len() || theta.is_empty() {
                return Err(Error::InvalidInput(
                    "tabulated prior needs matching non-empty columns".into(),
                ));
            }
            if theta.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput("tabulated prior nodes must increase".into()));
            }
            if value.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
                return Err(Error::InvalidInput("prior density must be positive".into()));
            }
        }
        Ok(())
    }

    /// Same prior multiplied by `factor > 0`.
    pub fn rescaled(&self, factor: T) -> Self {
        Self {
            density: self.density.clone(),
            scale: self.scale * factor,
        }
    }

    /// Unnormalized density, without the scale factor.
    pub fn shape(&self, theta: T) -> T {
        match &self.density {
            PriorDensity::Uniform => T::one(),
            PriorDensity::Tabulated { theta: xs, value } => {
                let j = xs.partition_point(|x| *x <= theta);
                if j == 0 {
                    value[0]
                } else if j == xs.len() {
                    value[xs.len() - 1]
                } else {
                    let w = (theta - xs[j - 1]) / (xs[j] - xs[j - 1]);
                    value[j - 1] + w * (value[j] - value[j - 1])
                }
            }
        }
    }

    pub fn density(&self, theta: T) -> T {
        self.scale * self.shape(theta)
    }
}

/// Location of an optimum and whether it sits on the first or last candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T: Real> {
    pub theta: T,
    pub boundary: bool,
    /// Objective at `theta` (`ℓ` for the MLE, the fitting residual for the TFE).
    pub objective: T,
}

/// One replication's estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EstimateRecord<T: Real> {
    pub rep: usize,
    pub eps: T,
    pub theta_mle: T,
    pub theta_bayes: Option<T>,
    pub theta_tfe: Option<T>,
    /// `log L` at the MLE; `−Φ(θ̂)` on noiseless paths.
    pub loglr_at_mle: T,
    pub boundary_mle: bool,
    pub boundary_tfe: bool,
    pub noiseless: bool,
    /// Terminal value `X_T` of the observed path.
    pub x_terminal: T,
}

impl<T: Real> EstimateRecord<T> {
    pub const CSV_HEADER: &'static str = "rep,eps,theta_mle,theta_bayes,theta_tfe,loglr,boundary_flag";

    pub fn boundary_flag(&self) -> bool {
        self.boundary_mle || self.boundary_tfe
    }

    pub fn csv_row(&self) -> String {
        use crate::format::decimal;
        let opt = |v: Option<T>| v.map(|x| decimal(x.to_f64_lossy())).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.rep,
            decimal(self.eps.to_f64_lossy()),
            decimal(self.theta_mle.to_f64_lossy()),
            opt(self.theta_bayes),
            opt(self.theta_tfe),
            decimal(self.loglr_at_mle.to_f64_lossy()),
            u8::from(self.boundary_flag())
        )
    }
}

struct ChangePointTable<T: Real> {
    /// `h(t_i) − g(t_i)`
    jump: Vec<T>,
    /// `½(C^h_i − C^g_i)` with `C^b_i = Δ/2 (b(t_i)² + b(t_{i+1})²)`
    half_dsq: Vec<T>,
    after: Vec<T>,
    half_after_sq: Vec<T>,
    /// Candidate cells `(t_{k−1}, t_k]` for `k` in `first..=last`.
    first: usize,
    last: usize,
}

struct SmoothTable<T: Real> {
    thetas: Vec<T>,
    /// Row-major `M(θ_k, t_i)`, `i = 0..=n`; absent when too large.
    values: Option<Vec<T>>,
    /// `½ ∫M(θ_k)²` per row.
    half_sq: Vec<T>,
}

struct TfeTable<T: Real> {
    coarse: TimeGrid<T>,
    stride: usize,
    thetas: Vec<T>,
    /// Row-major `m(θ_k, s_j)` on the coarse grid.
    values: Vec<T>,
    /// `Σ w_j m(θ_k, s_j)²`
    sq: Vec<T>,
}

enum MleTable<T: Real> {
    ChangePoint(ChangePointTable<T>),
    Smooth(SmoothTable<T>),
}

/// Precomputed, path-independent data for running the estimators on many paths of one grid.
pub struct InferencePlan<T: Real> {
    pub assumed: SignalSpec<T>,
    pub window: ParamWindow<T>,
    pub grid: TimeGrid<T>,
    mle: MleTable<T>,
    tfe: Option<TfeTable<T>>,
}

impl<T: Real> InferencePlan<T> {
    pub fn new(assumed: &SignalSpec<T>, window: &ParamWindow<T>, grid: &TimeGrid<T>, with_tfe: bool) -> Result<Self> {
        assumed.validate()?;
        grid.validate()?;
        window.validate(grid)?;
        let mle = if assumed.is_change_point() {
            MleTable::ChangePoint(change_point_table(assumed, window, grid)?)
        } else {
            MleTable::Smooth(smooth_table(assumed, window, grid))
        };
        let tfe = with_tfe.then(|| tfe_table(assumed, window, grid));
        Ok(Self {
            assumed: assumed.clone(),
            window: *window,
            grid: *grid,
            mle,
            tfe,
        })
    }

    pub fn has_tfe(&self) -> bool {
        self.tfe.is_some()
    }

    fn check_path(&self, path: &ObservationPath<T>) -> Result<()> {
        if path.grid != self.grid || path.values.len() != self.grid.steps + 1 {
            return Err(Error::InvalidInput(
                "path grid does not match the inference plan".into(),
            ));
        }
        Ok(())
    }

    /// Pseudo-MLE. On a noiseless path (`ε = 0`) this is the Kullback-Leibler minimizer,
    /// which needs the path's provenance.
    pub fn pmle(&self, path: &ObservationPath<T>) -> Result<Estimate<T>> {
        self.check_path(path)?;
        if path.eps == T::zero() {
            let prov = path.provenance.as_ref().ok_or_else(|| {
                Error::InvalidInput("noiseless pseudo-MLE needs the truth recorded in the path".into())
            })?;
            let theta = kl_minimizer(&self.assumed, &prov.truth, prov.theta0, &self.window, &self.grid)?;
            let value = -crate::profile::phi(&self.assumed, &prov.truth, prov.theta0, theta, &self.grid);
            return Ok(Estimate {
                theta,
                boundary: false,
                objective: value,
            });
        }
        let inc = path.increments();
        match &self.mle {
            MleTable::ChangePoint(table) => {
                let (values, base) = change_point_values(table, &inc);
                let k = argmax(&values).ok_or(Error::Degenerate("empty candidate set".into()))?;
                Ok(Estimate {
                    theta: self.cell_mid(table.first + k),
                    boundary: k == 0 || k + 1 == values.len(),
                    objective: base + values[k],
                })
            }
            MleTable::Smooth(table) => self.smooth_pmle(table, &inc),
        }
    }

    fn cell_mid(&self, k: usize) -> T {
        (self.grid.node(k - 1) + self.grid.node(k)) / T::lit(2.0)
    }

    fn smooth_pmle(&self, table: &SmoothTable<T>, inc: &[T]) -> Result<Estimate<T>> {
        let n = self.grid.steps;
        let values: Vec<T> = (0..table.thetas.len())
            .map(|k| match &table.values {
                Some(v) => dot(&v[k * (n + 1)..k * (n + 1) + n], inc) - table.half_sq[k],
                None => scaled_log_lr(&self.assumed, table.thetas[k], &self.grid, inc),
            })
            .collect();
        let k = argmax(&values).ok_or(Error::Degenerate("log-likelihood is NaN everywhere".into()))?;
        let last = values.len() - 1;
        if k == 0 || k == last {
            return Ok(Estimate {
                theta: table.thetas[k],
                boundary: true,
                objective: values[k],
            });
        }
        let (lo, hi) = (table.thetas[k - 1], table.thetas[k + 1]);
        let tol = self
            .window
            .tol_theta()
            .max(T::lit(8.0) * T::epsilon() * self.window.upper.abs());
        let objective = |th: T| scaled_log_lr(&self.assumed, th, &self.grid, inc);
        let root = if smooth_in_theta(&self.assumed) {
            brent_root(|th| self.score(th, inc), lo, hi, tol)
        } else {
            None
        };
        let theta = root.unwrap_or_else(|| golden_section_min(|th| -objective(th), lo, hi, tol).0);
        let value = objective(theta);
        // the table and the direct sum round differently
        let slack = T::lit(64.0) * T::epsilon() * (values[k].abs() + table.half_sq[k].abs());
        if value >= values[k] - slack {
            Ok(Estimate {
                theta,
                boundary: false,
                objective: value,
            })
        } else {
            Ok(Estimate {
                theta: table.thetas[k],
                boundary: false,
                objective: values[k],
            })
        }
    }

    /// Exact derivative of the discretized `ℓ` for models smooth in `θ`.
    fn score(&self, theta: T, inc: &[T]) -> T {
        let grid = &self.grid;
        let half_dt = grid.dt() / T::lit(2.0);
        let mut ito = T::zero();
        let mut quad = T::zero();
        let point = |t: T| {
            let m = self.assumed.eval(theta, t);
            let d = self.assumed.dtheta(theta, t).unwrap_or(T::nan());
            (m, d)
        };
        let mut left = point(grid.node(0));
        for (i, &dx) in inc.iter().enumerate() {
            let right = point(grid.node(i + 1));
            ito += left.1 * dx;
            quad += half_dt * (left.0 * left.1 + right.0 * right.1);
            left = right;
        }
        ito - quad
    }

    /// `ℓ` at every candidate `θ`: cell midpoints for change-point models, the coarse scan otherwise.
    pub fn scaled_profile(&self, path: &ObservationPath<T>) -> Result<Vec<(T, T)>> {
        self.check_path(path)?;
        let inc = path.increments();
        Ok(match &self.mle {
            MleTable::ChangePoint(table) => {
                let (values, base) = change_point_values(table, &inc);
                values
                    .into_iter()
                    .enumerate()
                    .map(|(j, v)| (self.cell_mid(table.first + j), base + v))
                    .collect()
            }
            MleTable::Smooth(table) => table
                .thetas
                .iter()
                .map(|&th| (th, scaled_log_lr(&self.assumed, th, &self.grid, &inc)))
                .collect(),
        })
    }

    /// Posterior mean `∫θ p(θ) L(θ) dθ / ∫p(θ) L(θ) dθ`.
    pub fn bayes(&self, path: &ObservationPath<T>, prior: &Prior<T>) -> Result<T> {
        self.check_path(path)?;
        prior.validate()?;
        if !(path.eps > T::zero()) {
            return Err(Error::InvalidInput("Bayesian estimator needs eps > 0".into()));
        }
        let inv_eps2 = T::one() / (path.eps * path.eps);
        let inc = path.increments();
        match &self.mle {
            MleTable::ChangePoint(table) => {
                let (values, _) = change_point_values(table, &inc);
                let thetas: Vec<T> = (0..values.len()).map(|j| self.cell_mid(table.first + j)).collect();
                let logs: Vec<T> = values.iter().map(|&v| v * inv_eps2).collect();
                let weights = vec![T::one(); thetas.len()];
                posterior_mean(&thetas, &logs, &weights, prior)
            }
            MleTable::Smooth(table) => {
                let thetas = crate::grid::linspace(self.window.lower, self.window.upper, BAYES_NODES);
                let coarse: Vec<T> = match &table.values {
                    Some(v) => {
                        let n = self.grid.steps;
                        (0..table.thetas.len())
                            .map(|k| dot(&v[k * (n + 1)..k * (n + 1) + n], &inc) - table.half_sq[k])
                            .collect()
                    }
                    None => table
                        .thetas
                        .iter()
                        .map(|&th| scaled_log_lr(&self.assumed, th, &self.grid, &inc))
                        .collect(),
                };
                // Only nodes near coarse points within reach of the maximum can carry weight.
                let best = coarse.iter().copied().fold(T::neg_infinity(), T::max);
                let reach = T::lit(-2.0 * EXP_FLOOR) / inv_eps2;
                let live: Vec<usize> = (0..coarse.len()).filter(|&k| coarse[k] >= best - reach).collect();
                let lo = table.thetas[live.first().copied().unwrap_or(0).saturating_sub(1)];
                let hi = table.thetas[(live.last().copied().unwrap_or(0) + 1).min(coarse.len() - 1)];
                let lo = if live.first() == Some(&0) {
                    self.window.lower
                } else {
                    lo
                };
                let hi = if live.last() == Some(&(coarse.len() - 1)) {
                    self.window.upper
                } else {
                    hi
                };
                let logs: Vec<T> = thetas
                    .iter()
                    .map(|&th| {
                        if th < lo || th > hi {
                            T::neg_infinity()
                        } else {
                            scaled_log_lr(&self.assumed, th, &self.grid, &inc) * inv_eps2
                        }
                    })
                    .collect();
                let mut weights = vec![T::one(); thetas.len()];
                weights[0] = T::lit(0.5);
                weights[thetas.len() - 1] = T::lit(0.5);
                posterior_mean(&thetas, &logs, &weights, prior)
            }
        }
    }

    /// Trajectory-fitting estimator `argmin ∫[X_t − m(θ,t)]² dt`.
    pub fn tfe(&self, path: &ObservationPath<T>) -> Result<Estimate<T>> {
        self.check_path(path)?;
        let table = self.tfe.as_ref().ok_or(Error::InvalidInput(
            "plan was built without the trajectory-fitting table".into(),
        ))?;
        let xs: Vec<T> = (0..=table.coarse.steps)
            .map(|j| path.values[j * table.stride])
            .collect();
        let w = trapezoid_weights(&table.coarse);
        let xw: Vec<T> = xs.iter().zip(&w).map(|(x, w)| *x * *w).collect();
        let xx = dot(&xw, &xs);
        let cols = table.coarse.steps + 1;
        let values: Vec<T> = (0..table.thetas.len())
            .map(|k| xx - T::lit(2.0) * dot(&xw, &table.values[k * cols..(k + 1) * cols]) + table.sq[k])
            .collect();
        let k = argmin(&values).ok_or(Error::Degenerate("fitting residual is NaN everywhere".into()))?;
        let last = values.len() - 1;
        if k == 0 || k == last {
            return Ok(Estimate {
                theta: table.thetas[k],
                boundary: true,
                objective: values[k],
            });
        }
        let residual = |th: T| {
            let m = m_cumulative(&self.assumed, th, &table.coarse);
            xs.iter()
                .zip(&m)
                .zip(&w)
                .map(|((x, m), w)| *w * (*x - *m) * (*x - *m))
                .sum::<T>()
        };
        let (theta, value) = golden_section_min(
            residual,
            table.thetas[k - 1],
            table.thetas[k + 1],
            self.window.tol_theta(),
        );
        if value <= values[k] {
            Ok(Estimate {
                theta,
                boundary: false,
                objective: value,
            })
        } else {
            Ok(Estimate {
                theta: table.thetas[k],
                boundary: false,
                objective: values[k],
            })
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // four accumulators let the compiler vectorize
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = T::zero();
    for i in 4 * chunks..a.len().min(b.len()) {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn trapezoid_weights<T: Real>(grid: &TimeGrid<T>) -> Vec<T> {
    let dt = grid.dt();
    let mut w = vec![dt; grid.steps + 1];
    w[0] = dt / T::lit(2.0);
    w[grid.steps] = dt / T::lit(2.0);
    w
}

fn change_point_table<T: Real>(
    assumed: &SignalSpec<T>,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
) -> Result<ChangePointTable<T>> {
    let n = grid.steps;
    let branches: Vec<(T, T)> = (0..=n).map(|i| assumed.branches(grid.node(i))).collect::<Result<_>>()?;
    let half_dt = grid.dt() / T::lit(2.0);
    let half = T::lit(0.5);
    let mut jump = Vec::with_capacity(n);
    let mut half_dsq = Vec::with_capacity(n);
    let mut after = Vec::with_capacity(n);
    let mut half_after_sq = Vec::with_capacity(n);
    for i in 0..n {
        let (h0, g0) = branches[i];
        let (h1, g1) = branches[i + 1];
        let ch = half_dt * (h0 * h0 + h1 * h1);
        let cg = half_dt * (g0 * g0 + g1 * g1);
        jump.push(h0 - g0);
        half_dsq.push(half * (ch - cg));
        after.push(g0);
        half_after_sq.push(half * cg);
    }
    let first = (1..=n).find(|&k| grid.node(k - 1) >= window.lower);
    let last = (1..=n).rev().find(|&k| grid.node(k) <= window.upper);
    match (first, last) {
        (Some(first), Some(last)) if last >= first + 2 => Ok(ChangePointTable {
            jump,
            half_dsq,
            after,
            half_after_sq,
            first,
            last,
        }),
        _ => Err(Error::InvalidInput(
            "parameter window holds fewer than 3 grid cells".into(),
        )),
    }
}

/// `ℓ` minus a path constant for every candidate cell, plus that constant.
fn change_point_values<T: Real>(table: &ChangePointTable<T>, inc: &[T]) -> (Vec<T>, T) {
    let mut base = T::zero();
    let mut running = T::zero();
    let mut values = Vec::with_capacity(table.last - table.first + 1);
    for (i, &dx) in inc.iter().enumerate() {
        base += table.after[i] * dx - table.half_after_sq[i];
        running += table.jump[i] * dx - table.half_dsq[i];
        let k = i + 1;
        if k >= table.first && k <= table.last {
            values.push(running);
        }
    }
    (values, base)
}

fn smooth_table<T: Real>(assumed: &SignalSpec<T>, window: &ParamWindow<T>, grid: &TimeGrid<T>) -> SmoothTable<T> {
    let thetas = window.scan_points(grid, SCAN_POINTS);
    let n = grid.steps;
    let nodes = grid.nodes();
    let half_dt = grid.dt() / T::lit(2.0);
    let half = T::lit(0.5);
    let store = thetas.len() * (n + 1) <= PLAN_TABLE_LIMIT;
    let mut values = store.then(|| Vec::with_capacity(thetas.len() * (n + 1)));
    let mut half_sq = Vec::with_capacity(thetas.len());
    for &th in &thetas {
        let row: Vec<T> = nodes.iter().map(|&t| assumed.eval(th, t)).collect();
        let sq: T = row.windows(2).map(|w| half_dt * (w[0] * w[0] + w[1] * w[1])).sum();
        half_sq.push(half * sq);
        if let Some(v) = values.as_mut() {
            v.extend_from_slice(&row);
        }
    }
    SmoothTable {
        thetas,
        values,
        half_sq,
    }
}

/// Smallest divisor `s` of `n` with `n / s ≤ max_panels` (falls back to 1 when only `n` itself qualifies).
fn decimation_stride(n: usize, max_panels: usize) -> usize {
    if n <= max_panels {
        return 1;
    }
    let start = n.div_ceil(max_panels);
    (start..n).find(|s| n.is_multiple_of(*s) && n / s >= 2).unwrap_or(1)
}

fn tfe_table<T: Real>(assumed: &SignalSpec<T>, window: &ParamWindow<T>, grid: &TimeGrid<T>) -> TfeTable<T> {
    let stride = decimation_stride(grid.steps, TFE_MAX_PANELS);
    let coarse = grid.with_steps(grid.steps / stride);
    let thetas = window.scan_points(grid, SCAN_POINTS);
    let w = trapezoid_weights(&coarse);
    let mut values = Vec::with_capacity(thetas.len() * (coarse.steps + 1));
    let mut sq = Vec::with_capacity(thetas.len());
    for &th in &thetas {
        let m = m_cumulative(assumed, th, &coarse);
        sq.push(m.iter().zip(&w).map(|(m, w)| *w * *m * *m).sum());
        values.extend_from_slice(&m);
    }
    TfeTable {
        coarse,
        stride,
        thetas,
        values,
        sq,
    }
}

fn posterior_mean<T: Real>(thetas: &[T], logs: &[T], weights: &[T], prior: &Prior<T>) -> Result<T> {
    let best = logs.iter().copied().fold(T::neg_infinity(), T::max);
    if !best.is_finite() {
        return Err(Error::NumericUnderflow);
    }
    let floor = T::lit(EXP_FLOOR);
    let mut num = T::zero();
    let mut den = T::zero();
    for ((&th, &l), &w) in thetas.iter().zip(logs).zip(weights) {
        let rel = l - best;
        if rel < floor {
            continue;
        }
        let mass = w * prior.shape(th) * rel.exp();
        num += th * mass;
        den += mass;
    }
    if !(den > T::zero()) || !num.is_finite() {
        return Err(Error::NumericUnderflow);
    }
    Ok(num / den)
}

/// Pseudo-MLE over the window.
pub fn pmle<T: Real>(
    assumed: &SignalSpec<T>,
    window: &ParamWindow<T>,
    path: &ObservationPath<T>,
) -> Result<Estimate<T>> {
    InferencePlan::new(assumed, window, &path.grid, false)?.pmle(path)
}

/// Posterior mean under `prior`.
pub fn bayes<T: Real>(
    assumed: &SignalSpec<T>,
    window: &ParamWindow<T>,
    prior: &Prior<T>,
    path: &ObservationPath<T>,
) -> Result<T> {
    InferencePlan::new(assumed, window, &path.grid, false)?.bayes(path, prior)
}

/// Trajectory-fitting estimator.
pub fn tfe<T: Real>(
    assumed: &SignalSpec<T>,
    window: &ParamWindow<T>,
    path: &ObservationPath<T>,
) -> Result<Estimate<T>> {
    InferencePlan::new(assumed, window, &path.grid, true)?.tfe(path)
}

/// Noiseless trajectory-fitting minimizer `ϑ*` on the same discretization the estimator uses.
pub fn tfe_centre<T: Real>(plan: &InferencePlan<T>, truth: &SignalSpec<T>, theta0: T) -> Result<T> {
    let drift = crate::observation::drift_increments(truth, theta0, &plan.grid);
    let mut values = Vec::with_capacity(drift.len() + 1);
    let mut x = T::zero();
    values.push(x);
    for d in drift {
        x += d;
        values.push(x);
    }
    let path = ObservationPath {
        grid: plan.grid,
        values,
        eps: T::zero(),
        provenance: None,
    };
    let est = plan.tfe(&path)?;
    if est.boundary {
        return Err(Error::BoundaryMinimizer {
            side: if est.theta < (plan.window.lower + plan.window.upper) / T::lit(2.0) {
                crate::error::BoundarySide::Lower
            } else {
                crate::error::BoundarySide::Upper
            },
            theta: est.theta.to_f64_lossy(),
        });
    }
    Ok(est.theta)
}

/// Gaussian limit of `(ϑ*_ε − ϑ*)/ε` for the trajectory-fitting estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TfeLimit<T: Real> {
    /// Noiseless minimizer `ϑ*`.
    pub centre: T,
    /// `Var(∫W ṁ dt) / (Ψ''(ϑ*)/2)²`
    pub variance: T,
    /// Same numerator over `(∫ṁ²)²`, dropping the `∫(x − m) m̈` term of `Ψ''/2`.
    pub variance_without_curvature: T,
}

/// Linearizes the fitting equation `∫(X − m) ṁ dt = 0` around `ϑ*` by quadrature on `grid`.
pub fn tfe_limit<T: Real>(
    assumed: &SignalSpec<T>,
    truth: &SignalSpec<T>,
    theta0: T,
    window: &ParamWindow<T>,
    grid: &TimeGrid<T>,
) -> Result<TfeLimit<T>> {
    let plan = InferencePlan::new(assumed, window, grid, true)?;
    let centre = tfe_centre(&plan, truth, theta0)?;
    let drift = crate::observation::drift_increments(truth, theta0, grid);
    let x: Vec<T> = std::iter::once(T::zero())
        .chain(drift.iter().scan(T::zero(), |acc, d| {
            *acc += *d;
            Some(*acc)
        }))
        .collect();
    let w = trapezoid_weights(grid);
    let psi = |th: T| {
        let m = m_cumulative(assumed, th, grid);
        x.iter()
            .zip(&m)
            .zip(&w)
            .map(|((x, m), w)| *w * (*x - *m) * (*x - *m))
            .sum::<T>()
    };

    let h = T::lit(1e-4) * window.width();
    let up = m_cumulative(assumed, centre + h, grid);
    let down = m_cumulative(assumed, centre - h, grid);
    let mdot: Vec<T> = up.iter().zip(&down).map(|(a, b)| (*a - *b) / (h + h)).collect();
    let info: T = mdot.iter().zip(&w).map(|(d, w)| *w * *d * *d).sum();

    // Var ∫W ṁ dt = ∫ (∫_t^T ṁ ds)² dt
    let dt = grid.dt();
    let mut tail = vec![T::zero(); mdot.len()];
    for i in (0..grid.steps).rev() {
        tail[i] = tail[i + 1] + dt * (mdot[i] + mdot[i + 1]) / T::lit(2.0);
    }
    let noise: T = tail.iter().zip(&w).map(|(v, w)| *w * *v * *v).sum();

    let hc = T::lit(crate::profile::CURVATURE_STEP);
    let half_second = (psi(centre + hc) - T::lit(2.0) * psi(centre) + psi(centre - hc)) / (T::lit(2.0) * hc * hc);
    if !(half_second > T::zero()) || !(info > T::zero()) {
        return Err(Error::ConditionViolated {
            condition: "positive trajectory-fitting curvature",
            value: half_second.to_f64_lossy(),
        });
    }
    Ok(TfeLimit {
        centre,
        variance: noise / (half_second * half_second),
        variance_without_curvature: noise / (info * info),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{sample_wiener, synthesize};
    use crate::profile::phi;
    use crate::signal::TimeFn;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn grid(t: f64, n: usize) -> TimeGrid<f64> {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn empty_model_has_zero_likelihood() {
        let g = grid(1.0, 128);
        let p = synthesize(&SignalSpec::sgn(), 0.5, 0.1, &sample_wiener(&g, 1, 0));
        let zero = SignalSpec::step(TimeFn::constant(0.0), TimeFn::constant(0.0));
        assert_eq!(log_pseudo_lr(&zero, 0.4, &p).unwrap(), 0.0);
        assert!(log_pseudo_lr(&zero, 0.4, &ObservationPath { eps: 0.0, ..p }).is_err());
    }

    #[test]
    fn constant_shift_identity() {
        // M + c changes log L by ε⁻²(c X_T − c²T/2 − c∫M dt)
        let g = grid(2.0, 400);
        let p = synthesize(&SignalSpec::sgn(), 0.7, 0.2, &sample_wiener(&g, 4, 1));
        let base = SignalSpec::<f64>::sine(1.0, 1.5);
        let c = 0.3;
        let shifted = base
            .clone()
            .with_perturbations(Some(TimeFn::constant(c)), Some(TimeFn::constant(c)));
        let th = 0.9;
        let int_m: f64 = g
            .nodes()
            .windows(2)
            .map(|w| 0.5 * g.dt() * (base.eval(th, w[0]) + base.eval(th, w[1])))
            .sum();
        let expected = (c * p.terminal() - c * c * 2.0 / 2.0 - c * int_m) / (0.2 * 0.2);
        let diff = log_pseudo_lr(&shifted, th, &p).unwrap() - log_pseudo_lr(&base, th, &p).unwrap();
        assert_abs_diff_eq!(diff, expected, epsilon = 1e-9);
    }

    #[test]
    fn sgn_likelihood_reduces_to_ito_minus_half_horizon() {
        let g = grid(1.0, 256);
        let p = synthesize(&SignalSpec::linear_drift(), 0.5, 0.1, &sample_wiener(&g, 9, 0));
        let th = 0.5 + 0.5 * g.dt();
        let ito: f64 = p
            .increments()
            .iter()
            .enumerate()
            .map(|(i, dx)| if g.node(i) < th { -dx } else { *dx })
            .sum();
        let l = log_pseudo_lr(&SignalSpec::sgn(), th, &p).unwrap();
        assert_abs_diff_eq!(l, (ito - 0.5) / 0.01, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_sgn_likelihood_tracks_phi() {
        let g = grid(1.0, 4096);
        let truth = SignalSpec::linear_drift();
        let assumed = SignalSpec::sgn();
        let p = synthesize(&truth, 0.5, 0.0, &sample_wiener(&g, 0, 0));
        let inc = p.increments();
        let l0 = scaled_log_lr(&assumed, 0.5, &g, &inc);
        for th in [0.3, 0.42, 0.61, 0.8] {
            let dl = scaled_log_lr(&assumed, th, &g, &inc) - l0;
            let dphi = phi(&assumed, &truth, 0.5, th, &g) - phi(&assumed, &truth, 0.5, 0.5, &g);
            // the jump is resolved to a cell, so the slope 4|θ−θ0| costs up to one Δ
            assert_abs_diff_eq!(dl, -dphi / 2.0, epsilon = 4.0 * (th - 0.5_f64).abs() * g.dt());
        }
    }

    #[test]
    fn change_point_prefix_sums_match_brute_force() {
        let g = grid(1.0, 256);
        let w = ParamWindow::new(0.1, 0.9);
        let assumed = SignalSpec::step(TimeFn::constant(1.0), TimeFn::Poly { poly: vec![-1.0, 0.5] });
        for seed in 0..5 {
            let p = synthesize(&SignalSpec::linear_drift(), 0.5, 0.3, &sample_wiener(&g, seed, 0));
            let plan = InferencePlan::new(&assumed, &w, &g, false).unwrap();
            let prof = plan.scaled_profile(&p).unwrap();
            let inc = p.increments();
            let brute: Vec<f64> = prof
                .iter()
                .map(|(th, _)| scaled_log_lr(&assumed, *th, &g, &inc))
                .collect();
            for ((_, v), b) in prof.iter().zip(&brute) {
                assert_abs_diff_eq!(*v, *b, epsilon = 1e-12);
            }
            let k = argmax(&brute).unwrap();
            assert_eq!(plan.pmle(&p).unwrap().theta, prof[k].0);
        }
    }

    #[test]
    fn example2_closed_form() {
        let t_end = 4.0;
        let g = grid(t_end, 4096);
        let w = ParamWindow::new(0.5, 3.5);
        let plan = InferencePlan::new(&SignalSpec::linear_drift(), &w, &g, false).unwrap();
        for seed in 0..10 {
            let p = synthesize(&SignalSpec::sgn(), 1.0, 0.05, &sample_wiener(&g, seed, 0));
            let est = plan.pmle(&p).unwrap();
            let closed = (t_end * t_end - 2.0 * p.terminal()) / (2.0 * t_end);
            assert_abs_diff_eq!(est.theta, closed, epsilon = w.tol_theta());
        }
    }

    #[test]
    fn noiseless_self_consistency() {
        let g = grid(2.0, 2048);
        let w = ParamWindow::new(0.2, 1.8);
        let s = SignalSpec::<f64>::sine(1.0, 1.3);
        let p = synthesize(&s, 0.77, 0.0, &sample_wiener(&g, 0, 0));
        assert_abs_diff_eq!(pmle(&s, &w, &p).unwrap().theta, 0.77, epsilon = w.tol_theta());
        assert_abs_diff_eq!(tfe(&s, &w, &p).unwrap().theta, 0.77, epsilon = 1e-7);
    }

    #[test]
    fn bayes_prior_scale_is_bit_exact() {
        let g = grid(1.0, 512);
        let w = ParamWindow::new(0.1, 0.9);
        let p = synthesize(&SignalSpec::linear_drift(), 0.5, 0.2, &sample_wiener(&g, 2, 0));
        let prior = Prior::tabulated(vec![0.1, 0.5, 0.9], vec![1.0, 2.0, 0.5]).unwrap();
        let a = bayes(&SignalSpec::sgn(), &w, &prior, &p).unwrap();
        let b = bayes(&SignalSpec::sgn(), &w, &prior.rescaled(7.0), &p).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(w.contains(a));
    }

    #[test]
    fn bayes_matches_mle_for_symmetric_quadratic_likelihood() {
        // linear drift model: ℓ is exactly quadratic in θ, so the posterior is a truncated Gaussian
        let g = grid(4.0, 1024);
        let w = ParamWindow::new(0.5, 3.5);
        let p = synthesize(&SignalSpec::linear_drift(), 2.0, 0.05, &sample_wiener(&g, 3, 0));
        let plan = InferencePlan::new(&SignalSpec::linear_drift(), &w, &g, false).unwrap();
        let mle = plan.pmle(&p).unwrap().theta;
        let be = plan.bayes(&p, &Prior::uniform()).unwrap();
        assert_abs_diff_eq!(be, mle, epsilon = 1e-6);
    }

    #[test]
    fn m_cumulative_examples() {
        let g = grid(1.0, 8);
        let ones = SignalSpec::step(TimeFn::constant(1.0), TimeFn::constant(1.0));
        let m = m_cumulative(&ones, 0.5, &g);
        for (i, v) in m.iter().enumerate() {
            assert_abs_diff_eq!(*v, g.node(i), epsilon = 1e-15);
        }
        let plus_minus = SignalSpec::step(TimeFn::constant(1.0), TimeFn::constant(-1.0));
        let th = 0.3;
        for (i, v) in m_cumulative(&plus_minus, th, &g).iter().enumerate() {
            let t = g.node(i);
            let want = if t < th { t } else { 2.0 * th - t };
            assert_abs_diff_eq!(*v, want, epsilon = 1e-15);
        }
        for (i, v) in m_cumulative(&SignalSpec::sgn(), th, &g).iter().enumerate() {
            let t = g.node(i);
            let want = if t < th { -t } else { t - 2.0 * th };
            assert_abs_diff_eq!(*v, want, epsilon = 1e-15);
        }
        let lin = m_cumulative(&SignalSpec::linear_drift(), 0.4, &g);
        for i in [1, 4, 8] {
            let t = g.node(i);
            assert_abs_diff_eq!(lin[i], t * t / 2.0 - 0.4 * t, epsilon = 1e-15);
        }
    }

    #[test]
    fn tfe_example2_noiseless_closed_form() {
        // ∫ t (t²/2 − ϑt) dt = ∫ t X(t) dt with X(t) = |t − θ0| − θ0 for the sgn truth
        let (t_end, theta0) = (4.0_f64, 1.0_f64);
        let g = grid(t_end, 4096);
        let w = ParamWindow::new(0.5, 3.5);
        let p = synthesize(&SignalSpec::sgn(), theta0, 0.0, &sample_wiener(&g, 0, 0));
        let est = tfe(&SignalSpec::linear_drift(), &w, &p).unwrap();
        // ∫_0^T t(|t−θ0|−θ0) dt, split at θ0
        let a = theta0;
        let left = {
            let f = |t: f64| -t * t * t / 3.0;
            f(a) - f(0.0)
        };
        let right = {
            let f = |t: f64| t * t * t / 3.0 - a * t * t;
            f(t_end) - f(a)
        };
        let rhs = left + right;
        let want = (t_end.powi(4) / 8.0 - rhs) / (t_end.powi(3) / 3.0);
        assert_abs_diff_eq!(est.theta, want, epsilon = 1e-6);
    }

    #[test]
    fn tfe_limit_example1() {
        // x = t²/2 − θ0 t, m = −t before ϑ and t − 2ϑ after, ṁ = −2·1{t ≥ ϑ};
        // ϑ* solves ∫_ϑ^1 (t²/2 − 3t/2 + 2ϑ) dt = 0
        let theta0 = 0.5;
        let f = |v: f64| (1.0 - v.powi(3)) / 6.0 - 0.75 * (1.0 - v * v) + 2.0 * v * (1.0 - v);
        let centre = brent_root(f, 0.2, 0.6, 1e-15).unwrap();
        let noise = 4.0 * ((1.0 - centre.powi(3)) / 3.0 - centre * centre * (1.0 - centre));
        let half_second = 2.0 * (2.0 * (1.0 - centre) - centre * centre / 2.0 - centre / 2.0);
        let info = 4.0 * (1.0 - centre);
        let lim = tfe_limit(
            &SignalSpec::sgn(),
            &SignalSpec::linear_drift(),
            theta0,
            &ParamWindow::new(0.1, 0.9),
            &grid(1.0, 1 << 14),
        )
        .unwrap();
        // the fitting integral is a trapezoid over 4096 panels; the kink of m sits inside one
        assert_abs_diff_eq!(lim.centre, centre, epsilon = 1e-4);
        assert_relative_eq!(lim.variance, noise / (half_second * half_second), max_relative = 1e-3);
        assert_relative_eq!(
            lim.variance_without_curvature,
            noise / (info * info),
            max_relative = 1e-3
        );
        assert_abs_diff_eq!(lim.variance, 0.2486, epsilon = 1e-3);
        assert_abs_diff_eq!(lim.variance_without_curvature, 0.1489, epsilon = 1e-3);
    }

    #[test]
    fn stride_divides() {
        assert_eq!(decimation_stride(16384, 4096), 4);
        assert_eq!(decimation_stride(4096 * 123, 4096), 123);
        assert_eq!(decimation_stride(1000, 4096), 1);
    }
}
