//! Comparator methods: stationary least squares, rolling windows, EWMA via
//! ARIMA(0,1,1) maximum likelihood, and local-level state-space models.

mod ewma;
mod local_level;
mod state_space_lr;

pub use ewma::{ewma_fit, ewma_forecast_at, Arima011Fit};
pub use local_level::{
    local_level_filter, local_level_filter_known, LocalLevelMode, LocalLevelState,
};
pub use state_space_lr::{state_space_lr_fit, state_space_lr_fit_known, StateSpaceLrFit};

use nalgebra::{DMatrix, DVector};

use crate::error::{PwdError, Result};
use crate::regression::{ols, OlsFit};

/// Classical stationary least-squares fit of the full history.
pub fn stationary_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    ols(x, y)
}

/// Least squares on the trailing `window` observations.
pub fn rolling_window_fit(x: &DMatrix<f64>, y: &DVector<f64>, window: usize) -> Result<OlsFit> {
    let t = x.nrows();
    if window > t {
        return Err(PwdError::InsufficientData { needed: window, got: t });
    }
    if window <= x.ncols() {
        return Err(PwdError::InvalidParameter(format!(
            "window {window} must exceed the number of covariates {}",
            x.ncols()
        )));
    }
    let xs = x.rows(t - window, window).into_owned();
    let ys = DVector::from_fn(window, |r, _| y[t - window + r]);
    ols(&xs, &ys)
}
