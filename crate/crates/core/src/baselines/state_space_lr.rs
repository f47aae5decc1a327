//! Dynamic linear regression: coefficients follow independent random walks,
//! filtered by the Kalman recursions, with variances chosen by maximum
//! likelihood over the prediction-error decomposition.
//!
//! One evolution variance is shared across coefficients and scaled per
//! coefficient by the covariate's root-mean-square, so evolution noise
//! contributes comparably to the prediction regardless of regressor units.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{PwdError, Result};

const VAR_FLOOR: f64 = 1e-12;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximum-likelihood dynamic regression fit.
#[derive(Debug, Clone)]
pub struct StateSpaceLrFit {
    /// Terminal filtered coefficient means, used for prediction.
    pub beta: DVector<f64>,
    /// Observation variance estimate.
    pub v: f64,
    /// Shared evolution variance (before per-coefficient scaling).
    pub w_scale: f64,
    /// Log likelihood at the optimum.
    pub loglik: f64,
    /// Set when the ratio optimum sits on the search boundary or the
    /// optimizer fell back to a fixed discount filter.
    pub boundary: bool,
}

impl StateSpaceLrFit {
    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.beta.dot(x)
    }
}

/// Per-coefficient evolution scaling: inverse squared RMS of each column.
fn evolution_scales(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|k| {
            let ms = x.column(k).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64;
            1.0 / ms.max(VAR_FLOOR)
        })
        .collect()
}

/// Finds the shortest leading block of rows with a positive-definite Gram
/// matrix and returns its least-squares fit: the exact-information start for
/// the filter.
fn exact_start(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(usize, DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    for n0 in p..=x.nrows() {
        let xs = x.rows(0, n0);
        let gram = xs.transpose() * xs;
        if let Some(chol) = Cholesky::new(gram) {
            let beta = chol.solve(&(xs.transpose() * y.rows(0, n0)));
            return Ok((n0, beta, chol.inverse()));
        }
    }
    Err(PwdError::Singular("design never reaches full column rank".into()))
}

/// Kalman pass at signal-to-noise ratio `q`, in units of the observation
/// variance. Returns `(beta, sum_ln_f, sum_e2_over_f, terms)`.
fn filter_ratio(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: f64,
    scales: &[f64],
    n0: usize,
    beta0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> (DVector<f64>, f64, f64, usize) {
    let p = x.ncols();
    let mut beta = beta0.clone();
    let mut cov = p0.clone();
    let mut sum_ln_f = 0.0;
    let mut sum_e2_f = 0.0;
    let mut terms = 0;
    for t in n0..x.nrows() {
        for k in 0..p {
            cov[(k, k)] += q * scales[k];
        }
        let xt = x.row(t).transpose();
        let cx = &cov * &xt;
        let f = xt.dot(&cx) + 1.0;
        let e = y[t] - beta.dot(&xt);
        sum_ln_f += f.ln();
        sum_e2_f += e * e / f;
        terms += 1;
        let gain = &cx / f;
        beta += &gain * e;
        cov -= &gain * cx.transpose();
    }
    (beta, sum_ln_f, sum_e2_f, terms)
}

fn concentrated_loglik(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: f64,
    scales: &[f64],
    n0: usize,
    beta0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> f64 {
    let (_, sum_ln_f, sum_e2_f, terms) = filter_ratio(x, y, q, scales, n0, beta0, p0);
    if terms == 0 {
        return f64::NEG_INFINITY;
    }
    let n = terms as f64;
    let v_hat = (sum_e2_f / n).max(VAR_FLOOR);
    -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + v_hat.ln() + 1.0) - 0.5 * sum_ln_f
}

/// Fits the random-walk-coefficient regression by maximum likelihood and
/// returns the terminal filtered coefficients.
pub fn state_space_lr_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<StateSpaceLrFit> {
    let (t, p) = (x.nrows(), x.ncols());
    if t != y.len() {
        return Err(PwdError::DimensionMismatch { expected: t, got: y.len() });
    }
    if t <= 3 * p {
        return Err(PwdError::InsufficientData { needed: 3 * p + 1, got: t });
    }
    let scales = evolution_scales(x);
    let (n0, beta0, p0) = exact_start(x, y)?;

    let mut grid = vec![0.0];
    for i in 0..40 {
        grid.push(10f64.powf(-8.0 + 10.0 * i as f64 / 39.0));
    }
    let values: Vec<f64> = grid
        .iter()
        .map(|&q| concentrated_loglik(x, y, q, &scales, n0, &beta0, &p0))
        .collect();
    if values.iter().all(|v| !v.is_finite()) {
        // Flat or broken likelihood: fall back to a fixed-discount filter.
        return discount_fallback(x, y, n0, &beta0, &p0);
    }
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
    let mut f1 = concentrated_loglik(x, y, x1, &scales, n0, &beta0, &p0);
    let mut f2 = concentrated_loglik(x, y, x2, &scales, n0, &beta0, &p0);
    for _ in 0..50 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = concentrated_loglik(x, y, x2, &scales, n0, &beta0, &p0);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = concentrated_loglik(x, y, x1, &scales, n0, &beta0, &p0);
        }
    }
    let q = 0.5 * (lo + hi);
    let (beta, _, sum_e2_f, terms) = filter_ratio(x, y, q, &scales, n0, &beta0, &p0);
    let v = (sum_e2_f / terms as f64).max(VAR_FLOOR);
    Ok(StateSpaceLrFit {
        beta,
        v,
        w_scale: q * v,
        loglik: concentrated_loglik(x, y, q, &scales, n0, &beta0, &p0),
        boundary: best == grid.len() - 1,
    })
}

/// Filter with known variances: `v` observational, `w_scale` shared
/// evolution variance before per-coefficient scaling. Oracle hook for tests
/// and the degenerate `w_scale = 0` stationary check.
pub fn state_space_lr_fit_known(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    v: f64,
    w_scale: f64,
) -> Result<StateSpaceLrFit> {
    if !(v > 0.0) || w_scale < 0.0 {
        return Err(PwdError::InvalidParameter("variances must be positive".into()));
    }
    let scales = evolution_scales(x);
    let (n0, beta0, p0) = exact_start(x, y)?;
    let q = w_scale / v;
    let (beta, sum_ln_f, sum_e2_f, terms) = filter_ratio(x, y, q, &scales, n0, &beta0, &p0);
    let n = terms as f64;
    let loglik =
        -0.5 * n * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * sum_ln_f - 0.5 * sum_e2_f / v;
    Ok(StateSpaceLrFit { beta, v, w_scale, loglik, boundary: false })
}

fn discount_fallback(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    n0: usize,
    beta0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> Result<StateSpaceLrFit> {
    // Mild fixed discounting of the state covariance in place of an
    // estimated evolution variance.
    let delta = 0.98;
    let mut beta = beta0.clone();
    let mut cov = p0.clone();
    let mut sum_e2_f = 0.0;
    let mut terms = 0usize;
    for t in n0..x.nrows() {
        cov /= delta;
        let xt = x.row(t).transpose();
        let cx = &cov * &xt;
        let f = xt.dot(&cx) + 1.0;
        let e = y[t] - beta.dot(&xt);
        sum_e2_f += e * e / f;
        terms += 1;
        let gain = &cx / f;
        beta += &gain * e;
        cov -= &gain * cx.transpose();
    }
    let v = if terms > 0 { (sum_e2_f / terms as f64).max(VAR_FLOOR) } else { VAR_FLOOR };
    Ok(StateSpaceLrFit { beta, v, w_scale: 0.0, loglik: f64::NEG_INFINITY, boundary: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn fixed_design(t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = rand_distr::Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(t, 2, |_, c| if c == 0 { 1.0 } else { d.sample(&mut rng) })
    }

    #[test]
    fn zero_evolution_variance_equals_ols() {
        let x = fixed_design(120, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let noise = rand_distr::Normal::new(0.0, 0.5).unwrap();
        let y = DVector::from_fn(120, |r, _| {
            1.0 + 2.0 * x[(r, 1)] + noise.sample(&mut rng)
        });
        let fit = state_space_lr_fit_known(&x, &y, 0.25, 0.0).unwrap();
        let ols = crate::regression::ols(&x, &y).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(fit.beta[k], ols.beta[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn tracks_random_walk_coefficients() {
        let t = 600;
        let x = fixed_design(t, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let noise = rand_distr::Normal::new(0.0, 0.3).unwrap();
        let step = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let mut slope = 1.0;
        let mut truth = Vec::with_capacity(t);
        let y = DVector::from_fn(t, |r, _| {
            slope += step.sample(&mut rng);
            truth.push(slope);
            0.5 + slope * x[(r, 1)] + noise.sample(&mut rng)
        });

        let fit = state_space_lr_fit(&x, &y).unwrap();
        let terminal_truth = *truth.last().unwrap();
        let dynamic_err = (fit.beta[1] - terminal_truth).abs();
        let static_err = (crate::regression::ols(&x, &y).unwrap().beta[1] - terminal_truth).abs();
        assert!(
            dynamic_err < static_err,
            "filtered error {dynamic_err} not below stationary error {static_err}"
        );
        assert!(fit.w_scale > 0.0);
    }

    #[test]
    fn stationary_data_estimates_small_evolution() {
        let t = 400;
        let x = fixed_design(t, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let noise = rand_distr::Normal::new(0.0, 0.4).unwrap();
        let y = DVector::from_fn(t, |r, _| 0.3 - 1.2 * x[(r, 1)] + noise.sample(&mut rng));
        let fit = state_space_lr_fit(&x, &y).unwrap();
        assert!(fit.w_scale / fit.v < 0.01, "q = {}", fit.w_scale / fit.v);
        let ols = crate::regression::ols(&x, &y).unwrap();
        for k in 0..2 {
            assert!((fit.beta[k] - ols.beta[k]).abs() < 0.1);
        }
    }

    #[test]
    fn requires_enough_history() {
        let x = fixed_design(6, 7);
        let y = DVector::from_element(6, 1.0);
        assert!(state_space_lr_fit(&x, &y).is_err());
    }
}
