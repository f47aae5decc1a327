//! Significance testing for method comparisons.

use statrs::distribution::ContinuousCDF;

use crate::error::{PwdError, Result};

/// Two-sided Welch test result.
#[derive(Debug, Clone, Copy)]
pub struct TTestResult {
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided t-test of equal means without assuming equal variances
/// (Welch-Satterthwaite degrees of freedom). The inputs are per-dataset or
/// per-group error summaries.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(PwdError::InsufficientData { needed: 2, got: a.len().min(b.len()) });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64], m: f64| {
        s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    if va == 0.0 && vb == 0.0 {
        if ma == mb {
            // Identical constant samples carry no evidence of a difference.
            return Ok(TTestResult { t_stat: 0.0, df: (na + nb - 2.0).max(1.0), p_value: 1.0 });
        }
        return Err(PwdError::Degenerate("both samples have zero variance".into()));
    }
    let se2 = va / na + vb / nb;
    let t_stat = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = statrs::distribution::StudentsT::new(0.0, 1.0, df)
        .map_err(|e| PwdError::InvalidParameter(e.to_string()))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t_stat.abs()));
    Ok(TTestResult { t_stat, df, p_value })
}
