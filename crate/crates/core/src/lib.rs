//! Small-noise estimation under misspecified signal regularity.
//!
//! Observations `dX = S(θ0,t)dt + ε dW` are fitted with a possibly wrong model `M(θ,t)`.
//! The crate computes the deterministic limit (the Kullback-Leibler minimizer and its
//! curvature), runs pseudo-MLE, Bayesian and trajectory-fitting estimators on simulated paths,
//! samples the argmax and Gaussian limit laws, and checks convergence rates by Monte Carlo.
//!
//! Everything numeric is generic over [`Real`] (`f32`/`f64`); rate exponents are exact rationals.

// `!(x > 0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod format;
pub mod grid;
pub mod inference;
pub mod limit;
pub mod observation;
pub mod optimize;
pub mod profile;
pub mod rng;
pub mod scalar;
pub mod signal;
pub mod stats;

pub use error::{BoundarySide, Error, Result};
pub use experiments::{preset, run_scenario, Estimator, McReport, Scenario, Target, TargetSpec, PRESET_NAMES};
pub use grid::{ParamWindow, Side, TimeGrid};
pub use inference::{EstimateRecord, InferencePlan, Prior};
pub use limit::{rate_exponent, ArgmaxKind, ArgmaxLawSpec, GaussianLimit, Regime};
pub use observation::{ObservationPath, WienerPath};
pub use profile::{CurvatureRegime, DeterministicProfile};
pub use scalar::Real;
pub use signal::{Family, SignalSpec, TimeFn};

/// Exact rate exponent.
pub type Rational = num_rational::Ratio<i64>;

pub type TimeGridF64 = TimeGrid<f64>;
pub type ParamWindowF64 = ParamWindow<f64>;
pub type SignalSpecF64 = SignalSpec<f64>;
pub type ObservationPathF64 = ObservationPath<f64>;
pub type DeterministicProfileF64 = DeterministicProfile<f64>;
pub type EstimateRecordF64 = EstimateRecord<f64>;
pub type ScenarioF64 = Scenario<f64>;
pub type McReportF64 = McReport<f64>;

pub type TimeGridF32 = TimeGrid<f32>;
pub type ParamWindowF32 = ParamWindow<f32>;
pub type SignalSpecF32 = SignalSpec<f32>;
pub type ObservationPathF32 = ObservationPath<f32>;
