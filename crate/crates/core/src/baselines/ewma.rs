//! Exponentially weighted moving average forecasting via exact maximum
//! likelihood for an ARIMA(0,1,1) model.
//!
//! The first differences `d_t = y_t - y_{t-1}` follow an MA(1),
//! `d_t = e_t + theta * e_{t-1}`. The Gaussian likelihood is evaluated
//! exactly with the innovations recursion, the scale is concentrated out, and
//! `theta` is maximized by a coarse grid followed by golden-section
//! refinement. With `alpha = -theta`, the implied one-step forecast is the
//! exponentially weighted average of the observed levels.

use crate::error::{PwdError, Result};

const THETA_BOUND: f64 = 0.999;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximum-likelihood ARIMA(0,1,1) fit and its one-step level forecast.
#[derive(Debug, Clone, Copy)]
pub struct Arima011Fit {
    /// Moving-average coefficient, constrained to the invertible region.
    pub theta: f64,
    /// Innovation variance.
    pub sigma2: f64,
    /// Maximized log likelihood of the differenced series.
    pub loglik: f64,
    /// Set when the optimum sits at the invertibility bound.
    pub boundary: bool,
    /// One-step forecast of the next level.
    pub forecast: f64,
}

/// Innovations-recursion pass over the differences at a fixed `theta` with
/// unit innovation variance. Returns `(sum_ln_w, sum_e2_over_w, next_diff)`
/// where `next_diff` is the exact one-step predictor of the next difference.
fn innovations_pass(diffs: &[f64], theta: f64) -> (f64, f64, f64) {
    let gamma0 = 1.0 + theta * theta;
    let mut w = gamma0;
    let mut pred = 0.0;
    let mut sum_ln_w = 0.0;
    let mut sum_e2_w = 0.0;
    let mut next = 0.0;
    for &d in diffs {
        let e = d - pred;
        sum_ln_w += w.ln();
        sum_e2_w += e * e / w;
        let k = theta / w;
        next = k * e;
        pred = next;
        w = gamma0 - theta * theta / w;
    }
    (sum_ln_w, sum_e2_w, next)
}

/// Concentrated log likelihood at `theta` (scale profiled out).
fn concentrated_loglik(diffs: &[f64], theta: f64) -> f64 {
    let n = diffs.len() as f64;
    let (sum_ln_w, sum_e2_w, _) = innovations_pass(diffs, theta);
    let sigma2 = sum_e2_w / n;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln() + 1.0) - 0.5 * sum_ln_w
}

/// One-step level forecast at a fixed (already estimated) moving-average
/// coefficient: a single innovations pass over the differences.
pub fn ewma_forecast_at(series: &[f64], theta: f64) -> Result<f64> {
    if series.len() < 2 {
        return Err(PwdError::InsufficientData { needed: 2, got: series.len() });
    }
    if !(theta.abs() < 1.0) {
        return Err(PwdError::InvalidParameter(format!(
            "moving-average coefficient must be invertible, got {theta}"
        )));
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let (_, _, next_diff) = innovations_pass(&diffs, theta);
    Ok(series.last().expect("non-empty") + next_diff)
}

/// Fits the ARIMA(0,1,1) by exact maximum likelihood and reports the implied
/// exponentially weighted one-step forecast.
pub fn ewma_fit(series: &[f64]) -> Result<Arima011Fit> {
    if series.len() < 10 {
        return Err(PwdError::InsufficientData { needed: 10, got: series.len() });
    }
    if series.iter().any(|y| !y.is_finite()) {
        return Err(PwdError::InvalidParameter("non-finite observation".into()));
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let last = *series.last().expect("non-empty");

    // A constant series differences to zero: the level forecast is the
    // constant itself and the noise scale is zero.
    if diffs.iter().all(|d| d.abs() == 0.0) {
        return Ok(Arima011Fit {
            theta: 0.0,
            sigma2: 0.0,
            loglik: f64::INFINITY,
            boundary: false,
            forecast: last,
        });
    }

    // Coarse grid over the invertible region, then golden-section refinement
    // between the neighbors of the best grid point.
    let grid: Vec<f64> = (0..81)
        .map(|i| -THETA_BOUND + 2.0 * THETA_BOUND * i as f64 / 80.0)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&t| concentrated_loglik(&diffs, t)).collect();
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let mut lo = if best == 0 { grid[0] } else { grid[best - 1] };
    let mut hi = if best == grid.len() - 1 { grid[best] } else { grid[best + 1] };

    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = concentrated_loglik(&diffs, x1);
    let mut f2 = concentrated_loglik(&diffs, x2);
    for _ in 0..60 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = concentrated_loglik(&diffs, x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = concentrated_loglik(&diffs, x1);
        }
    }
    let theta = 0.5 * (lo + hi);

    let n = diffs.len() as f64;
    let (_, sum_e2_w, next_diff) = innovations_pass(&diffs, theta);
    let sigma2 = sum_e2_w / n;
    let loglik = concentrated_loglik(&diffs, theta);
    Ok(Arima011Fit {
        theta,
        sigma2,
        loglik,
        boundary: theta.abs() >= THETA_BOUND - 1e-3,
        forecast: last + next_diff,
    })
}
