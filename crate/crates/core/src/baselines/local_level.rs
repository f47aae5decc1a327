//! Local-level (random walk plus noise) state-space model for a univariate
//! series, in two flavors: variances estimated by maximum likelihood through
//! the prediction-error decomposition, or a discounted closed form in which
//! the posterior mean is a geometrically weighted average of the data.

use crate::error::{PwdError, Result};

const VAR_FLOOR: f64 = 1e-12;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// How the local-level variances are determined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalLevelMode {
    /// Observation and evolution variances by maximum likelihood.
    MleVariances,
    /// Discount-factor form: closed-form posterior with geometric weights.
    Discount { delta: f64 },
}

/// Terminal filter state of the local-level model.
#[derive(Debug, Clone, Copy)]
pub struct LocalLevelState {
    /// Terminal posterior mean of the level (also the one-step forecast).
    pub m: f64,
    /// Terminal posterior variance of the level.
    pub c: f64,
    /// Observation variance.
    pub v: f64,
    /// Evolution variance (MLE mode) or discount factor (discount mode).
    pub w_or_delta: f64,
    /// Log likelihood from the prediction-error decomposition (MLE mode).
    pub loglik: Option<f64>,
    /// Set when the variance optimum sits on the search boundary.
    pub boundary: bool,
    /// One-step forecast of the next observation, equal to `m`.
    pub forecast: f64,
}

/// Filter pass at a fixed signal-to-noise ratio `q = W/V`, run in units of
/// `V`. Returns `(m, c_over_v, sum_ln_f, sum_e2_over_f, terms)` with a
/// diffuse start absorbed into the first observation.
fn filter_ratio(series: &[f64], q: f64) -> (f64, f64, f64, f64, usize) {
    let mut m = series[0];
    let mut c = 1.0; // C_1 = V under the diffuse limit
    let mut sum_ln_f = 0.0;
    let mut sum_e2_f = 0.0;
    let mut terms = 0;
    for &y in &series[1..] {
        let r = c + q;
        let f = r + 1.0;
        let e = y - m;
        sum_ln_f += f.ln();
        sum_e2_f += e * e / f;
        terms += 1;
        let gain = r / f;
        m += gain * e;
        c = r / f;
    }
    (m, c, sum_ln_f, sum_e2_f, terms)
}

fn concentrated_loglik(series: &[f64], q: f64) -> f64 {
    let (_, _, sum_ln_f, sum_e2_f, terms) = filter_ratio(series, q);
    let n = terms as f64;
    let v_hat = (sum_e2_f / n).max(VAR_FLOOR);
    -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + v_hat.ln() + 1.0) - 0.5 * sum_ln_f
}

/// Filters a series with the local-level model.
pub fn local_level_filter(series: &[f64], mode: LocalLevelMode) -> Result<LocalLevelState> {
    if series.len() < 10 {
        return Err(PwdError::InsufficientData { needed: 10, got: series.len() });
    }
    if series.iter().any(|y| !y.is_finite()) {
        return Err(PwdError::InvalidParameter("non-finite observation".into()));
    }
    match mode {
        LocalLevelMode::Discount { delta } => {
            if !(delta > 0.0 && delta <= 1.0) {
                return Err(PwdError::InvalidParameter(format!(
                    "discount factor must lie in (0, 1], got {delta}"
                )));
            }
            // Closed form: geometric average of the observations.
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &y) in series.iter().rev().enumerate() {
                let w = delta.powi(i as i32);
                num += w * y;
                den += w;
            }
            let m = num / den;
            // Plug-in observation variance from the same weighting.
            let mut vsum = 0.0;
            for (i, &y) in series.iter().rev().enumerate() {
                vsum += delta.powi(i as i32) * (y - m) * (y - m);
            }
            let v = (vsum / den).max(VAR_FLOOR);
            Ok(LocalLevelState {
                m,
                c: v / den,
                v,
                w_or_delta: delta,
                loglik: None,
                boundary: false,
                forecast: m,
            })
        }
        LocalLevelMode::MleVariances => {
            // Coarse search over the signal-to-noise ratio, log-spaced with an
            // exact-zero candidate, then golden-section refinement.
            let mut grid = vec![0.0];
            for i in 0..45 {
                grid.push(10f64.powf(-8.0 + 11.0 * i as f64 / 44.0));
            }
            let values: Vec<f64> = grid.iter().map(|&q| concentrated_loglik(series, q)).collect();
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
            let mut f1 = concentrated_loglik(series, x1);
            let mut f2 = concentrated_loglik(series, x2);
            for _ in 0..60 {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + GOLDEN * (hi - lo);
                    f2 = concentrated_loglik(series, x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - GOLDEN * (hi - lo);
                    f1 = concentrated_loglik(series, x1);
                }
            }
            let q = 0.5 * (lo + hi);
            let (m, c_ratio, _, sum_e2_f, terms) = filter_ratio(series, q);
            let v = (sum_e2_f / terms as f64).max(VAR_FLOOR);
            let w = (q * v).max(0.0);
            let boundary = best == grid.len() - 1 || v <= VAR_FLOOR;
            Ok(LocalLevelState {
                m,
                c: c_ratio * v,
                v,
                w_or_delta: w.max(0.0),
                loglik: Some(concentrated_loglik(series, q)),
                boundary,
                forecast: m,
            })
        }
    }
}

/// Filter with known variances; the oracle for the MLE path and a building
/// block for tests.
pub fn local_level_filter_known(series: &[f64], v: f64, w: f64) -> Result<LocalLevelState> {
    if series.is_empty() {
        return Err(PwdError::InsufficientData { needed: 1, got: 0 });
    }
    if !(v > 0.0) || w < 0.0 {
        return Err(PwdError::InvalidParameter("variances must be positive".into()));
    }
    let q = w / v;
    let (m, c_ratio, sum_ln_f, sum_e2_f, terms) = filter_ratio(series, q);
    let n = terms as f64;
    let loglik =
        -0.5 * n * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * sum_ln_f - 0.5 * sum_e2_f / v;
    Ok(LocalLevelState {
        m,
        c: c_ratio * v,
        v,
        w_or_delta: w,
        loglik: Some(loglik),
        boundary: false,
        forecast: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn normal_draws(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = rand_distr::Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn unit_discount_is_sample_mean() {
        let series = normal_draws(50, 3.0, 1.0, 1);
        let s = local_level_filter(&series, LocalLevelMode::Discount { delta: 1.0 }).unwrap();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        assert_abs_diff_eq!(s.m, mean, epsilon = 1e-12);
    }

    #[test]
    fn discount_matches_power_weighted_posterior_mean() {
        let series = normal_draws(120, 0.0, 1.0, 2);
        for &alpha in &[0.7, 0.9, 0.99] {
            let s = local_level_filter(&series, LocalLevelMode::Discount { delta: alpha }).unwrap();
            let post = crate::normal::terminal_posterior(&series, alpha).unwrap();
            assert_abs_diff_eq!(s.m, post.mean_loc, epsilon = 1e-12);
        }
    }

    #[test]
    fn discount_variance_is_v_over_scaled_count() {
        let series = normal_draws(80, 0.0, 1.0, 3);
        let delta: f64 = 0.9;
        let s = local_level_filter(&series, LocalLevelMode::Discount { delta }).unwrap();
        let den: f64 = (0..series.len()).map(|i| delta.powi(i as i32)).sum();
        assert_relative_eq!(s.c, s.v / den, max_relative = 1e-12);
    }

    #[test]
    fn zero_evolution_tracks_running_mean() {
        let series = normal_draws(200, 1.5, 1.0, 4);
        let s = local_level_filter_known(&series, 1.0, 0.0).unwrap();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        assert_abs_diff_eq!(s.m, mean, epsilon = 1e-10);
    }

    #[test]
    fn mle_on_iid_data_prefers_tiny_evolution_variance() {
        let series = normal_draws(400, 0.0, 1.0, 5);
        let s = local_level_filter(&series, LocalLevelMode::MleVariances).unwrap();
        assert!(s.w_or_delta < 0.05, "estimated W = {}", s.w_or_delta);
        assert!((s.v - 1.0).abs() < 0.25, "estimated V = {}", s.v);
    }

    #[test]
    fn mle_recovers_signal_to_noise_on_random_walk() {
        // Level follows a random walk with W = 0.25, V = 1.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let step = rand_distr::Normal::new(0.0, 0.5).unwrap();
        let mut level = 0.0;
        let series: Vec<f64> = (0..2000)
            .map(|_| {
                level += step.sample(&mut rng);
                level + noise.sample(&mut rng)
            })
            .collect();
        let s = local_level_filter(&series, LocalLevelMode::MleVariances).unwrap();
        let q = s.w_or_delta / s.v;
        assert!((q - 0.25).abs() < 0.12, "estimated q = {q}");
        assert!(s.loglik.unwrap().is_finite());
    }

    #[test]
    fn known_variance_filter_matches_direct_recursion() {
        // Direct textbook recursion at fixed V, W as the oracle.
        let series = normal_draws(60, 0.0, 1.0, 7);
        let (v, w) = (1.3, 0.4);
        let s = local_level_filter_known(&series, v, w).unwrap();

        let mut m = series[0];
        let mut c = v;
        for &y in &series[1..] {
            let r = c + w;
            let gain = r / (r + v);
            m += gain * (y - m);
            c = r * v / (r + v);
        }
        assert_abs_diff_eq!(s.m, m, epsilon = 1e-12);
        assert_abs_diff_eq!(s.c, c, epsilon = 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let series = normal_draws(20, 0.0, 1.0, 8);
        assert!(local_level_filter(&series, LocalLevelMode::Discount { delta: 0.0 }).is_err());
        assert!(local_level_filter(&series, LocalLevelMode::Discount { delta: 1.5 }).is_err());
        assert!(local_level_filter(&[1.0; 5], LocalLevelMode::MleVariances).is_err());
    }
}
