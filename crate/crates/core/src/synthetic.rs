//! Reproducible generators for the two benchmark settings: a stationary
//! normal mean, and a panel of market-sensitivity regressions whose
//! coefficients drift with mean reversion toward the cross-group average.
//!
//! Every replication draws from its own counter-derived stream, so a
//! replication is reproducible in isolation and the set can be generated in
//! any order (or in parallel) without changing a single byte.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{PwdError, Result};
use crate::hier::{GroupSeries, PanelData};

/// Stationary univariate setting: `y_t = beta + noise`.
#[derive(Debug, Clone, Copy)]
pub struct StationaryMeanConfig {
    pub t: usize,
    pub beta: f64,
    pub sigma2: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for StationaryMeanConfig {
    fn default() -> Self {
        Self { t: 500, beta: 2.0, sigma2: 1.0, replications: 400, seed: 0 }
    }
}

/// One stationary replication, drawn from its own stream.
pub fn gen_stationary_rep(cfg: &StationaryMeanConfig, rep: u64) -> Result<Vec<f64>> {
    if !(cfg.sigma2 >= 0.0) {
        return Err(PwdError::InvalidParameter("noise variance must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::hier::derive_stream(cfg.seed, rep));
    let noise = Normal::new(0.0, cfg.sigma2.sqrt())
        .map_err(|e| PwdError::InvalidParameter(e.to_string()))?;
    Ok((0..cfg.t).map(|_| cfg.beta + noise.sample(&mut rng)).collect())
}

/// The full replication set.
pub fn gen_stationary(cfg: &StationaryMeanConfig) -> Result<Vec<Vec<f64>>> {
    (0..cfg.replications as u64).map(|r| gen_stationary_rep(cfg, r)).collect()
}

/// Group-mean-reverting market-sensitivity panel.
///
/// The market return is shared across groups; each group's sensitivity
/// follows a random walk pulled toward the cross-group average of the prior
/// period with a group-specific reversion strength drawn from a beta
/// distribution.
#[derive(Debug, Clone, Copy)]
pub struct HierCapmConfig {
    pub j: usize,
    pub t: usize,
    /// Market mean return.
    pub mu_m: f64,
    /// Market return standard deviation.
    pub sigma_m: f64,
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Sensitivity innovation standard deviation.
    pub tau: f64,
    /// Beta-distribution parameters of the reversion strength.
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    /// Adds a leading intercept column of ones to the design; the generating
    /// intercept is zero, so this only widens the fitted model.
    pub include_intercept: bool,
}

impl HierCapmConfig {
    fn base(j: usize, t: usize, seed: u64) -> Self {
        Self {
            j,
            t,
            mu_m: 0.047,
            sigma_m: 0.045,
            sigma: 0.04,
            tau: 0.08,
            a: 3.0,
            b: 97.0,
            seed,
            include_intercept: false,
        }
    }

    /// Many short series: 100 groups of 10 periods.
    pub fn setting1(seed: u64) -> Self {
        Self::base(100, 10, seed)
    }

    /// Few long series: 10 groups of 100 periods.
    pub fn setting2(seed: u64) -> Self {
        Self::base(10, 100, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.j < 1 || self.t < 1 {
            return Err(PwdError::InvalidParameter("panel dimensions must be positive".into()));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(PwdError::InvalidParameter(
                "reversion beta parameters must be positive".into(),
            ));
        }
        if self.sigma < 0.0 || self.tau < 0.0 || self.sigma_m < 0.0 {
            return Err(PwdError::InvalidParameter(
                "standard deviations must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A generated panel along with the latent truth used to produce it.
#[derive(Debug, Clone)]
pub struct HierCapmPanel {
    pub panel: PanelData,
    pub market: Vec<f64>,
    /// `true_betas[j][t]` is group `j`'s sensitivity at time `t`.
    pub true_betas: Vec<Vec<f64>>,
    /// Per-group reversion strengths.
    pub phis: Vec<f64>,
}

/// Generates replication `rep` of the panel setting.
pub fn gen_hier_capm(cfg: &HierCapmConfig, rep: u64) -> Result<HierCapmPanel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::hier::derive_stream(cfg.seed, rep));
    let err = |e: rand_distr::NormalError| PwdError::InvalidParameter(e.to_string());
    let market_d = Normal::new(cfg.mu_m, cfg.sigma_m).map_err(err)?;
    let noise_d = Normal::new(0.0, cfg.sigma).map_err(err)?;
    let innov_d = Normal::new(0.0, cfg.tau).map_err(err)?;
    let init_d = Normal::new(1.0, cfg.tau).map_err(err)?;
    let phi_d = Beta::new(cfg.a, cfg.b).map_err(|e| PwdError::InvalidParameter(e.to_string()))?;

    // Fixed draw order: market path, reversion strengths, initial
    // sensitivities, then per period the innovations and noises group by
    // group.
    let market: Vec<f64> = (0..cfg.t).map(|_| market_d.sample(&mut rng)).collect();
    let phis: Vec<f64> = (0..cfg.j).map(|_| phi_d.sample(&mut rng)).collect();
    let mut betas: Vec<f64> = (0..cfg.j).map(|_| init_d.sample(&mut rng)).collect();

    let mut beta_paths = vec![Vec::with_capacity(cfg.t); cfg.j];
    let mut responses = vec![Vec::with_capacity(cfg.t); cfg.j];
    for (gi, path) in beta_paths.iter_mut().enumerate() {
        path.push(betas[gi]);
    }
    for (gi, resp) in responses.iter_mut().enumerate() {
        resp.push(betas[gi] * market[0] + noise_d.sample(&mut rng));
    }
    for t in 1..cfg.t {
        let bar = betas.iter().sum::<f64>() / cfg.j as f64;
        for (gi, beta) in betas.iter_mut().enumerate() {
            let eta = phis[gi] * (bar - *beta) + innov_d.sample(&mut rng);
            *beta += eta;
            beta_paths[gi].push(*beta);
        }
        for (gi, beta) in betas.iter().enumerate() {
            responses[gi].push(beta * market[t] + noise_d.sample(&mut rng));
        }
    }

    let p = if cfg.include_intercept { 2 } else { 1 };
    let groups = (0..cfg.j)
        .map(|gi| {
            let x = DMatrix::from_fn(cfg.t, p, |row, col| {
                if cfg.include_intercept && col == 0 {
                    1.0
                } else {
                    market[row]
                }
            });
            GroupSeries {
                name: format!("g{gi:03}"),
                x,
                y: DVector::from_vec(responses[gi].clone()),
            }
        })
        .collect();
    let dates: Vec<u32> = (1..=cfg.t as u32).collect();
    Ok(HierCapmPanel {
        panel: PanelData::new(dates, groups)?,
        market,
        true_betas: beta_paths,
        phis,
    })
}
