//! Uniform time grids, parameter windows and breakpoint-aware trapezoid sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform grid `t_i = i*T/n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeGrid<T: Real> {
    pub horizon: T,
    pub steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        let grid = Self { horizon, steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.steps < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2 steps, got {}",
                self.steps
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.horizon / T::of_usize(self.steps)
    }

    /// Node `t_i`; `node(steps)` is exactly the horizon.
    #[inline]
    pub fn node(&self, i: usize) -> T {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * T::of_usize(i) / T::of_usize(self.steps)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Index of the cell `[t_k, t_{k+1})` containing `t`, clamped to `0..steps`.
    pub fn cell_of(&self, t: T) -> usize {
        let k = (t / self.dt()).floor().to_usize().unwrap_or(0);
        k.min(self.steps - 1)
    }

    /// Same horizon with `steps` replaced.
    pub fn with_steps(&self, steps: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps,
        }
    }
}

/// Open parameter interval `(lower, upper)` inside `(0, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ParamWindow<T: Real> {
    pub lower: T,
    pub upper: T,
}

impl<T: Real> ParamWindow<T> {
    pub fn new(lower: T, upper: T) -> Self {
        Self { lower, upper }
    }

    pub fn validate(&self, grid: &TimeGrid<T>) -> Result<()> {
        if !(self.lower > T::zero() && self.lower < self.upper && self.upper < grid.horizon) {
            return Err(Error::InvalidInput(format!(
                "window ({}, {}) must satisfy 0 < lower < upper < T = {}",
                self.lower, self.upper, grid.horizon
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    #[inline]
    pub fn contains(&self, theta: T) -> bool {
        theta > self.lower && theta < self.upper
    }

    /// Scan points strictly inside the window: `count` equispaced points on
    /// `[lower + dt, upper - dt]`.
    pub fn scan_points(&self, grid: &TimeGrid<T>, count: usize) -> Vec<T> {
        let lo = self.lower + grid.dt();
        let hi = self.upper - grid.dt();
        linspace(lo, hi, count)
    }

    /// Default optimizer tolerance, `1e-8 * (upper - lower)`.
    pub fn tol_theta(&self) -> T {
        T::lit(1e-8) * self.width()
    }
}

pub fn linspace<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    match count {
        0 => Vec::new(),
        1 => vec![(lo + hi) / T::lit(2.0)],
        _ => {
            let last = T::of_usize(count - 1);
            (0..count)
                .map(|j| {
                    if j + 1 == count {
                        hi
                    } else {
                        lo + (hi - lo) * T::of_usize(j) / last
                    }
                })
                .collect()
        }
    }
}

/// Which one-sided limit to take at a discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Composite trapezoid over `[0, T]` on the grid, with every panel that
/// contains a breakpoint split there. Panel starts are evaluated as right
/// limits and panel ends as left limits, so jumps at breakpoints or nodes
/// never straddle a panel. Exact for piecewise-linear integrands.
pub fn trapezoid_with_breaks<T, F>(grid: &TimeGrid<T>, breaks: &[T], f: F) -> T
where
    T: Real,
    F: FnMut(T, Side) -> T,
{
    panel_integrals(grid, breaks, f).into_iter().sum()
}

/// Cumulative version of [`trapezoid_with_breaks`]: entry `i` is the integral over `[0, t_i]`.
pub fn cumulative_trapezoid_with_breaks<T, F>(grid: &TimeGrid<T>, breaks: &[T], f: F) -> Vec<T>
where
    T: Real,
    F: FnMut(T, Side) -> T,
{
    panel_integrals(grid, breaks, f)
        .into_iter()
        .scan(T::zero(), |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .fold(vec![T::zero()], |mut out, v| {
            out.push(v);
            out
        })
}

/// Integral of `f` over each grid panel, splitting panels at breakpoints.
pub fn panel_integrals<T, F>(grid: &TimeGrid<T>, breaks: &[T], mut f: F) -> Vec<T>
where
    T: Real,
    F: FnMut(T, Side) -> T,
{
    let half = T::lit(0.5);
    let mut sorted: Vec<T> = breaks
        .iter()
        .copied()
        .filter(|b| *b > T::zero() && *b < grid.horizon)
        .collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    sorted.dedup();

    let mut out = Vec::with_capacity(grid.steps);
    let mut next_break = 0;
    for i in 0..grid.steps {
        let a = grid.node(i);
        let b = grid.node(i + 1);
        while next_break < sorted.len() && sorted[next_break] <= a {
            next_break += 1;
        }
        let mut start = a;
        let mut panel = T::zero();
        while next_break < sorted.len() && sorted[next_break] < b {
            let c = sorted[next_break];
            panel += half * (c - start) * (f(start, Side::Right) + f(c, Side::Left));
            start = c;
            next_break += 1;
        }
        panel += half * (b - start) * (f(start, Side::Right) + f(b, Side::Left));
        out.push(panel);
    }
    out
}
