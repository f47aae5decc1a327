//! Power-weighted density (PWD) estimation for non-stationary time series.
//!
//! The central idea: instead of modelling the evolution of latent parameters,
//! down-weight the likelihood contribution of older observations. Each lagged
//! observation's density is raised to a power in `[0, 1]` that decays with the
//! lag, so the posterior at the terminal time point is dominated by recent
//! data. A single decay parameter is estimated from the data by maximizing the
//! one-step-ahead predictive likelihood.
//!
//! The crate provides:
//!
//! - [`weights`]: decay schemes (exponential, linear, rolling window, explicit)
//!   and O(1)-per-observation weighted sufficient statistics.
//! - [`normal`]: conjugate inference for a univariate normal series with
//!   unknown mean and variance under power weighting, including decay
//!   estimation by predictive likelihood.
//! - [`hier`]: hierarchical linear regression with per-group decay weighting,
//!   Gibbs sampling for terminal coefficients, and plug-in predictive
//!   likelihood for per-group decay estimation.
//! - [`bma`]: predictive-likelihood model averaging over factor subsets.
//! - [`baselines`]: stationary OLS, rolling windows, EWMA via ARIMA(0,1,1)
//!   maximum likelihood, and local-level state-space comparators.
//! - [`synthetic`]: reproducible generators for the benchmark settings.
//! - [`backtest`]: rolling one-step-ahead evaluation with squared-error
//!   accounting, trajectory extraction, and significance tests.
//!
//! Grid sweeps, per-group fits, and Monte Carlo replications run in parallel
//! via rayon when the default `parallel` feature is enabled; disabling it
//! yields a dependency-free sequential build with identical results.

pub mod backtest;
pub mod baselines;
pub mod bma;
pub mod dist;
pub mod error;
pub mod hier;
pub mod normal;
pub(crate) mod par;
pub mod regression;
pub mod synthetic;
pub mod weights;

pub use error::{PwdError, Result};
