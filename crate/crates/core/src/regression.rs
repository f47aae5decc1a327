//! Decay-weighted regression sufficient statistics and small solvers.
//!
//! A weighted regression at decay `alpha` needs only `X'AX`, `X'Ay` and
//! `y'Ay` where `A = diag(1, alpha, alpha^2, ...)` over the lags. Appending a
//! row applies `S' = new + alpha * S` to each statistic (a rank-1 update for
//! the matrix), so a full sweep over a series costs O(T p^2) regardless of
//! how many decays or prediction points are evaluated downstream.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{PwdError, Result};
use crate::weights::WeightVector;

/// Decay-weighted cross products of a regression history.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRegStats {
    xax: DMatrix<f64>,
    xay: DVector<f64>,
    yay: f64,
    t_alpha: f64,
    n: usize,
}

impl WeightedRegStats {
    pub fn new(p: usize) -> Self {
        Self {
            xax: DMatrix::zeros(p, p),
            xay: DVector::zeros(p),
            yay: 0.0,
            t_alpha: 0.0,
            n: 0,
        }
    }

    /// Builds statistics over `rows` observations of `(x, y)` at a fixed
    /// decay (most recent row last).
    pub fn from_rows(x: &DMatrix<f64>, y: &DVector<f64>, rows: usize, alpha: f64) -> Result<Self> {
        if rows > x.nrows() || rows > y.len() {
            return Err(PwdError::InsufficientData { needed: rows, got: x.nrows().min(y.len()) });
        }
        let mut s = Self::new(x.ncols());
        for t in 0..rows {
            s.push_row(&x.row(t).transpose(), y[t], alpha);
        }
        Ok(s)
    }

    /// Builds statistics with explicit lag weights (lag 0 = last row).
    pub fn from_weighted_rows(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        rows: usize,
        weights: &WeightVector,
    ) -> Result<Self> {
        if rows > x.nrows() || rows > y.len() {
            return Err(PwdError::InsufficientData { needed: rows, got: x.nrows().min(y.len()) });
        }
        if weights.len() < rows {
            return Err(PwdError::InsufficientData { needed: rows, got: weights.len() });
        }
        let p = x.ncols();
        let mut s = Self::new(p);
        for t in 0..rows {
            let w = weights.weights()[rows - 1 - t];
            let xt = x.row(t).transpose();
            s.xax.ger(w, &xt, &xt, 1.0);
            s.xay.axpy(w * y[t], &xt, 1.0);
            s.yay += w * y[t] * y[t];
            s.t_alpha += w;
            s.n += 1;
        }
        Ok(s)
    }

    /// Appends an observation, decaying everything seen so far.
    pub fn push_row(&mut self, x: &DVector<f64>, y: f64, alpha: f64) {
        self.xax *= alpha;
        self.xay *= alpha;
        self.yay *= alpha;
        self.t_alpha *= alpha;
        self.xax.ger(1.0, x, x, 1.0);
        self.xay.axpy(y, x, 1.0);
        self.yay += y * y;
        self.t_alpha += 1.0;
        self.n += 1;
    }

    pub fn p(&self) -> usize {
        self.xay.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_alpha(&self) -> f64 {
        self.t_alpha
    }

    /// Symmetric `X'AX`.
    pub fn xax(&self) -> &DMatrix<f64> {
        &self.xax
    }

    pub fn xay(&self) -> &DVector<f64> {
        &self.xay
    }

    pub fn yay(&self) -> f64 {
        self.yay
    }

    /// Weighted residual sum of squares at coefficient vector `beta`:
    /// `y'Ay - 2 b'X'Ay + b'X'AX b`, clamped at zero.
    pub fn residual_quadratic(&self, beta: &DVector<f64>) -> f64 {
        let quad = beta.dot(&(&self.xax * beta));
        (self.yay - 2.0 * beta.dot(&self.xay) + quad).max(0.0)
    }

    /// Solves the penalized normal equations
    /// `(X'AX / sigma2 + diag(prior_precision)) b = X'Ay / sigma2 + prior_precision .* prior_mean`,
    /// returning the coefficient vector and the posterior covariance
    /// (the inverse of the bracketed precision).
    pub fn solve_with_prior(
        &self,
        sigma2: f64,
        prior: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if !(sigma2 > 0.0) {
            return Err(PwdError::Degenerate(format!(
                "residual variance must be positive, got {sigma2}"
            )));
        }
        let p = self.p();
        let mut precision = &self.xax / sigma2;
        let mut rhs = &self.xay / sigma2;
        if let Some((mean, tau2)) = prior {
            if mean.len() != p || tau2.len() != p {
                return Err(PwdError::DimensionMismatch { expected: p, got: mean.len().min(tau2.len()) });
            }
            for k in 0..p {
                if !(tau2[k] > 0.0) {
                    return Err(PwdError::Degenerate(format!(
                        "prior variance must be positive, got {}",
                        tau2[k]
                    )));
                }
                precision[(k, k)] += 1.0 / tau2[k];
                rhs[k] += mean[k] / tau2[k];
            }
        }
        let chol = Cholesky::new(precision)
            .ok_or_else(|| PwdError::Singular("weighted precision not positive definite".into()))?;
        let beta = chol.solve(&rhs);
        let cov = chol.inverse();
        Ok((beta, cov))
    }

    /// Plain weighted least squares (no prior), with a tiny ridge for rank
    /// safety when requested.
    pub fn solve_ls(&self, ridge: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut gram = self.xax.clone();
        if ridge > 0.0 {
            let scale = gram.diagonal().amax().max(1.0);
            for k in 0..gram.nrows() {
                gram[(k, k)] += ridge * scale;
            }
        }
        let chol = Cholesky::new(gram)
            .ok_or_else(|| PwdError::Singular("weighted Gram matrix not positive definite".into()))?;
        let beta = chol.solve(&self.xay);
        let cov = chol.inverse();
        Ok((beta, cov))
    }
}

/// Ordinary least squares via the normal equations; errors on rank
/// deficiency.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (t, p) = (x.nrows(), x.ncols());
    if t <= p {
        return Err(PwdError::InsufficientData { needed: p + 1, got: t });
    }
    let gram = x.transpose() * x;
    let chol = Cholesky::new(gram)
        .ok_or_else(|| PwdError::Singular("design matrix is rank deficient".into()))?;
    let xty = x.transpose() * y;
    let beta = chol.solve(&xty);
    let resid = y - x * &beta;
    let dof = (t - p) as f64;
    let sigma2 = resid.dot(&resid) / dof;
    let cov = chol.inverse() * sigma2;
    Ok(OlsFit { beta, sigma2, cov })
}

/// Classical least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// Residual variance with denominator `T - p`.
    pub sigma2: f64,
    /// Coefficient covariance `sigma2 (X'X)^-1`.
    pub cov: DMatrix<f64>,
}

impl OlsFit {
    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.beta.dot(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn random_design(t: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut x = DMatrix::zeros(t, p);
        for r in 0..t {
            x[(r, 0)] = 1.0;
            for c in 1..p {
                x[(r, c)] = d.sample(&mut rng);
            }
        }
        let beta = DVector::from_fn(p, |i, _| (i + 1) as f64 * 0.5);
        let y = DVector::from_fn(t, |r, _| x.row(r).transpose().dot(&beta) + 0.3 * d.sample(&mut rng));
        (x, y)
    }

    #[test]
    fn incremental_stats_match_direct_products() {
        let (x, y) = random_design(60, 3, 1);
        let alpha = 0.92;
        let stats = WeightedRegStats::from_rows(&x, &y, 60, alpha).unwrap();

        // Direct computation with materialized weights.
        let mut xax = DMatrix::zeros(3, 3);
        let mut xay = DVector::zeros(3);
        let mut yay = 0.0;
        for t in 0..60 {
            let w = alpha.powi((60 - 1 - t) as i32);
            let xt = x.row(t).transpose();
            xax += w * &xt * xt.transpose();
            xay += w * y[t] * &xt;
            yay += w * y[t] * y[t];
        }
        let got = stats.xax();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(got[(i, j)], xax[(i, j)], epsilon = 1e-9);
            }
            assert_abs_diff_eq!(stats.xay()[i], xay[i], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(stats.yay(), yay, epsilon = 1e-9);
    }

    #[test]
    fn residual_quadratic_matches_loop() {
        let (x, y) = random_design(40, 2, 2);
        let alpha = 0.85;
        let stats = WeightedRegStats::from_rows(&x, &y, 40, alpha).unwrap();
        let beta = DVector::from_vec(vec![0.2, 0.7]);
        let mut direct = 0.0;
        for t in 0..40 {
            let w = alpha.powi((40 - 1 - t) as i32);
            let r = y[t] - x.row(t).transpose().dot(&beta);
            direct += w * r * r;
        }
        assert_abs_diff_eq!(stats.residual_quadratic(&beta), direct, epsilon = 1e-9);
    }

    #[test]
    fn ols_recovers_noiseless_line() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        let fit = ols(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_intercept_only_is_mean() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 10.0]);
        let fit = ols(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_residuals_orthogonal_to_columns() {
        let (x, y) = random_design(80, 4, 3);
        let fit = ols(&x, &y).unwrap();
        let resid = &y - &x * &fit.beta;
        let gradient = x.transpose() * resid;
        for k in 0..4 {
            assert_abs_diff_eq!(gradient[k], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn ols_rejects_rank_deficiency() {
        // Second column duplicates the first.
        let x = DMatrix::from_fn(10, 2, |r, _| r as f64 + 1.0);
        let y = DVector::from_fn(10, |r, _| r as f64);
        assert!(ols(&x, &y).is_err());
    }

    #[test]
    fn diffuse_prior_solution_matches_ls() {
        let (x, y) = random_design(50, 3, 4);
        let stats = WeightedRegStats::from_rows(&x, &y, 50, 1.0).unwrap();
        let (ls, _) = stats.solve_ls(0.0).unwrap();
        let mean = DVector::zeros(3);
        let tau2 = DVector::from_element(3, 1e12);
        let (with_prior, _) = stats.solve_with_prior(1.0, Some((&mean, &tau2))).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(ls[k], with_prior[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn window_weighted_stats_equal_slice_ols() {
        let (x, y) = random_design(70, 3, 5);
        let win = 20;
        let wv = crate::weights::WeightScheme::Window { length: win }
            .materialize(70)
            .unwrap();
        let stats = WeightedRegStats::from_weighted_rows(&x, &y, 70, &wv).unwrap();
        let (beta_w, _) = stats.solve_ls(0.0).unwrap();
        let xs = x.rows(70 - win, win).into_owned();
        let ys = DVector::from_fn(win, |r, _| y[70 - win + r]);
        let fit = ols(&xs, &ys).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(beta_w[k], fit.beta[k], epsilon = 1e-10);
        }
    }
}
