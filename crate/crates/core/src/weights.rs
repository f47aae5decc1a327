//! Decay-weight schemes and incrementally maintained weighted statistics.
//!
//! Lag 0 is the most recent observation. Every scheme produces weights in
//! `[0, 1]` that are non-increasing in the lag, so recent data always counts
//! at least as much as older data.

use crate::error::{PwdError, Result};

/// How the likelihood weight decays with the lag of an observation.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// Geometric decay `alpha^i` at lag `i`, `alpha` in `[0, 1]`.
    Exponential { alpha: f64 },
    /// Straight-line decay `max(0, 1 - i/horizon)`, hitting zero at the
    /// horizon.
    Linear { horizon: usize },
    /// Hard truncation: weight 1 for lags below `length`, 0 beyond. This is
    /// rolling-window estimation expressed as a weight scheme.
    Window { length: usize },
    /// Caller-supplied weights, most recent first, each in `[0, 1]`.
    Explicit { weights: Vec<f64> },
}

impl WeightScheme {
    /// Materializes the first `length` lag weights along with their sum.
    pub fn materialize(&self, length: usize) -> Result<WeightVector> {
        if length == 0 {
            return Err(PwdError::InvalidParameter(
                "weight vector length must be at least 1".into(),
            ));
        }
        let w: Vec<f64> = match self {
            WeightScheme::Exponential { alpha } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(PwdError::InvalidParameter(format!(
                        "exponential decay parameter must lie in [0, 1], got {alpha}"
                    )));
                }
                let mut w = Vec::with_capacity(length);
                let mut cur = 1.0;
                for _ in 0..length {
                    w.push(cur);
                    cur *= alpha;
                }
                w
            }
            WeightScheme::Linear { horizon } => {
                if *horizon == 0 {
                    return Err(PwdError::InvalidParameter(
                        "linear decay horizon must be positive".into(),
                    ));
                }
                (0..length)
                    .map(|i| (1.0 - i as f64 / *horizon as f64).max(0.0))
                    .collect()
            }
            WeightScheme::Window { length: win } => {
                if *win == 0 {
                    return Err(PwdError::InvalidParameter(
                        "window length must be positive".into(),
                    ));
                }
                (0..length).map(|i| if i < *win { 1.0 } else { 0.0 }).collect()
            }
            WeightScheme::Explicit { weights } => {
                if weights.len() < length {
                    return Err(PwdError::InsufficientData {
                        needed: length,
                        got: weights.len(),
                    });
                }
                if let Some(bad) = weights[..length]
                    .iter()
                    .find(|w| !(0.0..=1.0).contains(*w) || !w.is_finite())
                {
                    return Err(PwdError::InvalidParameter(format!(
                        "explicit weights must lie in [0, 1], got {bad}"
                    )));
                }
                weights[..length].to_vec()
            }
        };
        Ok(WeightVector::new(w))
    }
}

/// Materialized lag weights (lag 0 first) with their precomputed sum, the
/// "scaled count" of effective observations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
    scaled_count: f64,
}

impl WeightVector {
    fn new(w: Vec<f64>) -> Self {
        let scaled_count = w.iter().sum();
        Self { w, scaled_count }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Sum of the weights: the effective number of observations.
    pub fn scaled_count(&self) -> f64 {
        self.scaled_count
    }
}

/// Weighted sums of a series under geometric decay, maintained in O(1) per
/// appended observation.
///
/// Appending `y` with decay `alpha` applies `S' = y + alpha * S` to each raw
/// sum, which reproduces the lag-weighted sums `sum_i alpha^i y_{t-i}` without
/// revisiting history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMoments {
    t_alpha: f64,
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl Default for WeightedMoments {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightedMoments {
    pub fn new() -> Self {
        Self {
            t_alpha: 0.0,
            sum: 0.0,
            sum_sq: 0.0,
            n: 0,
        }
    }

    /// Builds moments from a full series under geometric decay.
    pub fn from_series(series: &[f64], alpha: f64) -> Result<Self> {
        let mut m = Self::new();
        for &y in series {
            m.push(y, alpha)?;
        }
        Ok(m)
    }

    /// Builds moments from a series with explicit lag weights (lag 0 = last
    /// element of `series`). Used for schemes that do not admit the one-scalar
    /// decay recursion.
    pub fn from_weighted_series(series: &[f64], weights: &WeightVector) -> Result<Self> {
        if weights.len() < series.len() {
            return Err(PwdError::InsufficientData {
                needed: series.len(),
                got: weights.len(),
            });
        }
        let mut t_alpha = 0.0;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (lag, &y) in series.iter().rev().enumerate() {
            let w = weights.weights()[lag];
            t_alpha += w;
            sum += w * y;
            sum_sq += w * y * y;
        }
        Ok(Self {
            t_alpha,
            sum,
            sum_sq,
            n: series.len(),
        })
    }

    /// Appends an observation, making it the new lag-0 point.
    pub fn push(&mut self, y: f64, alpha: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(PwdError::InvalidParameter(format!(
                "observation must be finite, got {y}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PwdError::InvalidParameter(format!(
                "decay parameter must lie in [0, 1], got {alpha}"
            )));
        }
        self.t_alpha = 1.0 + alpha * self.t_alpha;
        self.sum = y + alpha * self.sum;
        self.sum_sq = y * y + alpha * self.sum_sq;
        self.n += 1;
        Ok(())
    }

    /// Functional form of [`push`](Self::push): returns the updated moments.
    pub fn updated(mut self, y: f64, alpha: f64) -> Result<Self> {
        self.push(y, alpha)?;
        Ok(self)
    }

    /// Scaled count `sum_i alpha^i` over the observations seen so far.
    pub fn t_alpha(&self) -> f64 {
        self.t_alpha
    }

    /// Number of observations appended.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Weighted mean of the series.
    pub fn wmean(&self) -> f64 {
        self.sum / self.t_alpha
    }

    /// Weighted mean of the squared series (second raw moment).
    pub fn wsecond(&self) -> f64 {
        self.sum_sq / self.t_alpha
    }

    /// Raw weighted variance `wsecond - wmean^2`, clamped at zero against
    /// cancellation.
    pub fn wvariance(&self) -> f64 {
        (self.wsecond() - self.wmean() * self.wmean()).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn exponential_unit_alpha_is_flat() {
        let v = WeightScheme::Exponential { alpha: 1.0 }.materialize(5).unwrap();
        assert_eq!(v.weights(), &[1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(v.scaled_count(), 5.0);
    }

    #[test]
    fn exponential_geometric_sum() {
        let v = WeightScheme::Exponential { alpha: 0.5 }.materialize(3).unwrap();
        assert_eq!(v.weights(), &[1.0, 0.5, 0.25]);
        assert_abs_diff_eq!(v.scaled_count(), 1.75);
    }

    #[test]
    fn window_truncates() {
        let v = WeightScheme::Window { length: 2 }.materialize(4).unwrap();
        assert_eq!(v.weights(), &[1.0, 1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(v.scaled_count(), 2.0);
    }

    #[test]
    fn linear_reaches_zero_at_horizon() {
        let v = WeightScheme::Linear { horizon: 4 }.materialize(6).unwrap();
        assert_eq!(v.weights(), &[1.0, 0.75, 0.5, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(WeightScheme::Exponential { alpha: 1.5 }.materialize(3).is_err());
        assert!(WeightScheme::Exponential { alpha: -0.1 }.materialize(3).is_err());
        assert!(WeightScheme::Window { length: 0 }.materialize(3).is_err());
        assert!(WeightScheme::Linear { horizon: 0 }.materialize(3).is_err());
        assert!(WeightScheme::Explicit { weights: vec![0.5] }.materialize(3).is_err());
        assert!(
            WeightScheme::Explicit { weights: vec![0.5, 1.2, 0.1] }
                .materialize(3)
                .is_err()
        );
        assert!(WeightScheme::Exponential { alpha: 0.5 }.materialize(0).is_err());
    }

    #[test]
    fn single_observation_moments() {
        let mut m = WeightedMoments::new();
        m.push(2.0, 0.9).unwrap();
        assert_abs_diff_eq!(m.t_alpha(), 1.0);
        assert_abs_diff_eq!(m.wmean(), 2.0);
        assert_abs_diff_eq!(m.wsecond(), 4.0);
    }

    #[test]
    fn unweighted_average() {
        let m = WeightedMoments::from_series(&[1.0, 3.0], 1.0).unwrap();
        assert_abs_diff_eq!(m.wmean(), 2.0);
        assert_abs_diff_eq!(m.t_alpha(), 2.0);
    }

    #[test]
    fn rejects_non_finite_observation() {
        let mut m = WeightedMoments::new();
        assert!(m.push(f64::NAN, 0.9).is_err());
        assert!(m.push(f64::INFINITY, 0.9).is_err());
    }

    /// Brute-force recomputation of the weighted sums from materialized lag
    /// weights; the oracle for the O(1) recursion.
    fn naive_moments(series: &[f64], alpha: f64) -> (f64, f64, f64) {
        let mut t = 0.0;
        let mut s = 0.0;
        let mut s2 = 0.0;
        let n = series.len();
        for (i, &y) in series.iter().rev().enumerate() {
            let w = alpha.powi(i as i32);
            t += w;
            s += w * y;
            s2 += w * y * y;
            let _ = n;
        }
        (t, s / t, s2 / t)
    }

    #[test]
    fn incremental_matches_naive_on_long_series() {
        // 200 pseudo-normal draws via a fixed recurrence; the exactness of the
        // recursion is what is under test, not the distribution.
        let mut state = 0x9e3779b97f4a7c15_u64;
        let series: Vec<f64> = (0..200)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                // Rough inverse-normal via sum of uniforms is unnecessary;
                // any bounded values exercise the sums.
                4.0 * (u - 0.5)
            })
            .collect();
        let m = WeightedMoments::from_series(&series, 0.8).unwrap();
        let (t, mean, second) = naive_moments(&series, 0.8);
        assert_relative_eq!(m.t_alpha(), t, max_relative = 1e-12);
        assert_relative_eq!(m.wmean(), mean, max_relative = 1e-10);
        assert_relative_eq!(m.wsecond(), second, max_relative = 1e-10);
    }

    #[test]
    fn explicit_weight_moments_match_flat_case() {
        let series = [1.0, 2.0, 3.0, 4.0];
        let wv = WeightScheme::Window { length: 2 }.materialize(4).unwrap();
        let m = WeightedMoments::from_weighted_series(&series, &wv).unwrap();
        // Window of 2 keeps the last two points only.
        assert_abs_diff_eq!(m.t_alpha(), 2.0);
        assert_abs_diff_eq!(m.wmean(), 3.5);
    }

    proptest! {
        #[test]
        fn materialized_weights_non_increasing(
            alpha in 0.0_f64..=1.0,
            horizon in 1_usize..50,
            win in 1_usize..50,
            len in 1_usize..60,
        ) {
            for scheme in [
                WeightScheme::Exponential { alpha },
                WeightScheme::Linear { horizon },
                WeightScheme::Window { length: win },
            ] {
                let v = scheme.materialize(len).unwrap();
                let w = v.weights();
                prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
                prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
                prop_assert!((v.scaled_count() - w.iter().sum::<f64>()).abs()
                    <= 1e-12 * v.scaled_count().max(1.0));
            }
        }

        #[test]
        fn incremental_equals_naive_at_every_prefix(
            series in prop::collection::vec(-50.0_f64..50.0, 2..120),
            alpha in 0.05_f64..=1.0,
        ) {
            let mut m = WeightedMoments::new();
            for t in 0..series.len() {
                m.push(series[t], alpha).unwrap();
                let (ta, mean, second) = naive_moments(&series[..=t], alpha);
                prop_assert!((m.t_alpha() - ta).abs() <= 1e-10 * ta.max(1.0));
                prop_assert!((m.wmean() - mean).abs() <= 1e-10 * mean.abs().max(1.0));
                prop_assert!((m.wsecond() - second).abs() <= 1e-10 * second.abs().max(1.0));
            }
        }
    }
}
