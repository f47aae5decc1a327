//! Distribution helpers: the location-scale Student-t used for every
//! one-step-ahead predictive, plus small sampling utilities for the Gibbs
//! conditionals.

use rand::Rng;
use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

use crate::error::{PwdError, Result};

/// One-step-ahead predictive distribution: a location-scale Student-t with
/// `df` degrees of freedom, location `loc` and squared scale `scale2`.
///
/// If `z ~ t_df` (standard), then `loc + sqrt(scale2) * z` has this
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTPredictive {
    pub df: f64,
    pub loc: f64,
    pub scale2: f64,
}

impl StudentTPredictive {
    pub fn new(df: f64, loc: f64, scale2: f64) -> Result<Self> {
        if !(df > 0.0) {
            return Err(PwdError::Degenerate(format!(
                "predictive degrees of freedom must be positive, got {df}"
            )));
        }
        if !(scale2 > 0.0) {
            return Err(PwdError::Degenerate(format!(
                "predictive squared scale must be positive, got {scale2}"
            )));
        }
        Ok(Self { df, loc, scale2 })
    }

    /// Predictive mean (equals `loc`; defined for df > 1, reported regardless).
    pub fn mean(&self) -> f64 {
        self.loc
    }

    /// Predictive variance, infinite for df <= 2.
    pub fn variance(&self) -> f64 {
        if self.df > 2.0 {
            self.scale2 * self.df / (self.df - 2.0)
        } else {
            f64::INFINITY
        }
    }

    /// Log density at `y`.
    pub fn log_pdf(&self, y: f64) -> f64 {
        student_t_log_pdf(y, self.df, self.loc, self.scale2)
    }

    /// Density at `y`.
    pub fn pdf(&self, y: f64) -> f64 {
        self.log_pdf(y).exp()
    }

    /// Draws one sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = rand_distr::StudentT::new(self.df).expect("df > 0 checked at construction");
        self.loc + self.scale2.sqrt() * t.sample(rng)
    }
}

/// Log density of the location-scale Student-t:
///
/// `lnG((v+1)/2) - lnG(v/2) - ln(v*pi*s2)/2 - (v+1)/2 * ln(1 + (y-m)^2/(v*s2))`
pub fn student_t_log_pdf(y: f64, df: f64, loc: f64, scale2: f64) -> f64 {
    let z2 = (y - loc) * (y - loc) / scale2;
    ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI * scale2).ln()
        - 0.5 * (df + 1.0) * (1.0 + z2 / df).ln()
}

/// Draws from an inverse gamma with density proportional to
/// `x^(-shape-1) * exp(-rate/x)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(PwdError::Degenerate(format!(
            "inverse gamma requires positive shape and rate, got ({shape}, {rate})"
        )));
    }
    // 1/X with X ~ Gamma(shape, rate) i.e. scale 1/rate.
    let g = rand_distr::Gamma::new(shape, 1.0 / rate)
        .map_err(|e| PwdError::InvalidParameter(e.to_string()))?;
    Ok(1.0 / g.sample(rng))
}
