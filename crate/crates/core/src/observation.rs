//! Wiener noise, observed trajectories `dX = S(θ0,t)dt + ε dW`, and grid integrals.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::format::decimal;
use crate::grid::{panel_integrals, trapezoid_with_breaks, Side, TimeGrid};
use crate::rng::stream_rng;
use crate::scalar::Real;
use crate::signal::SignalSpec;

/// Wiener increments on a grid, reproducible from `(seed, stream)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath<T: Real> {
    pub grid: TimeGrid<T>,
    /// `ΔW_i = W(t_i) − W(t_{i−1})`, `i = 1..=n`.
    pub increments: Vec<T>,
    pub seed: u64,
    pub stream: u64,
}

impl<T: Real> WienerPath<T> {
    /// `W(T)`.
    pub fn terminal(&self) -> T {
        self.increments.iter().copied().sum()
    }

    /// Node values `W(t_0) = 0, W(t_1), ...`.
    pub fn values(&self) -> Vec<T> {
        cumulate(&self.increments)
    }
}

/// Draws `n` i.i.d. `N(0, Δ)` increments from stream `(seed, stream)`.
pub fn sample_wiener<T: Real>(grid: &TimeGrid<T>, seed: u64, stream: u64) -> WienerPath<T> {
    let mut rng = stream_rng(seed, stream);
    let sd = grid.dt().sqrt();
    let increments = (0..grid.steps).map(|_| sd * T::standard_normal(&mut rng)).collect();
    WienerPath {
        grid: *grid,
        increments,
        seed,
        stream,
    }
}

/// Where an observed path came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Provenance<T: Real> {
    pub truth: SignalSpec<T>,
    pub theta0: T,
    pub seed: u64,
    pub stream: u64,
}

/// Observed trajectory `X_0 = 0, X_1, ..., X_n` at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath<T: Real> {
    pub grid: TimeGrid<T>,
    pub values: Vec<T>,
    pub eps: T,
    pub provenance: Option<Provenance<T>>,
}

impl<T: Real> ObservationPath<T> {
    pub fn terminal(&self) -> T {
        *self.values.last().expect("path has n+1 >= 3 nodes")
    }

    /// `X_{i+1} − X_i`.
    pub fn increments(&self) -> Vec<T> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Writes `t,X` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,X")?;
        for (i, x) in self.values.iter().enumerate() {
            writeln!(
                out,
                "{},{}",
                decimal(self.grid.node(i).to_f64_lossy()),
                decimal(x.to_f64_lossy())
            )?;
        }
        Ok(())
    }
}

/// Exact per-panel drift `∫_{t_i}^{t_{i+1}} S(θ0, s) ds` for piecewise-linear `S`, trapezoid otherwise.
pub fn drift_increments<T: Real>(truth: &SignalSpec<T>, theta0: T, grid: &TimeGrid<T>) -> Vec<T> {
    panel_integrals(grid, &[theta0], |t, side| truth.eval_sided(theta0, t, side))
}

/// `X_{i+1} = X_i + ∫S dt + ε ΔW_{i+1}`, with the drift panel containing `θ0` split at the jump.
pub fn synthesize<T: Real>(truth: &SignalSpec<T>, theta0: T, eps: T, wiener: &WienerPath<T>) -> ObservationPath<T> {
    let drift = drift_increments(truth, theta0, &wiener.grid);
    let mut path = synthesize_with_drift(&drift, eps, wiener);
    path.provenance = Some(Provenance {
        truth: truth.clone(),
        theta0,
        seed: wiener.seed,
        stream: wiener.stream,
    });
    path
}

/// Same as [`synthesize`] with the drift increments precomputed.
pub fn synthesize_with_drift<T: Real>(drift: &[T], eps: T, wiener: &WienerPath<T>) -> ObservationPath<T> {
    let mut values = Vec::with_capacity(drift.len() + 1);
    let mut x = T::zero();
    values.push(x);
    for (d, w) in drift.iter().zip(&wiener.increments) {
        x += *d + eps * *w;
        values.push(x);
    }
    ObservationPath {
        grid: wiener.grid,
        values,
        eps,
        provenance: None,
    }
}

/// Draws the noise and builds the path in one pass; bit-identical to
/// `synthesize_with_drift(drift, eps, &sample_wiener(grid, seed, stream))`.
pub fn simulate_path<T: Real>(grid: &TimeGrid<T>, drift: &[T], eps: T, seed: u64, stream: u64) -> ObservationPath<T> {
    let mut rng = stream_rng(seed, stream);
    let sd = grid.dt().sqrt();
    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut x = T::zero();
    values.push(x);
    for d in drift {
        let w = sd * T::standard_normal(&mut rng);
        x += *d + eps * w;
        values.push(x);
    }
    ObservationPath {
        grid: *grid,
        values,
        eps,
        provenance: None,
    }
}

/// Left-endpoint Itô sum `Σ f(t_i) (Y_{i+1} − Y_i)` over the given increments.
pub fn ito_integral<T: Real, F: Fn(T) -> T>(f: F, grid: &TimeGrid<T>, increments: &[T]) -> T {
    increments.iter().enumerate().map(|(i, &dy)| f(grid.node(i)) * dy).sum()
}

/// `∫_0^T f(t) dt` by trapezoid with registered breakpoints; exact for piecewise-linear `f`.
pub fn riemann_integral<T: Real, F: Fn(T, Side) -> T>(f: F, grid: &TimeGrid<T>, breaks: &[T]) -> T {
    trapezoid_with_breaks(grid, breaks, f)
}

fn cumulate<T: Real>(increments: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = T::zero();
    out.push(acc);
    for &d in increments {
        acc += d;
        out.push(acc);
    }
    out
}
