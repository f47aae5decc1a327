//! Desk-scale benchmark studies: every replication trains each method on the
//! first T-1 observations and predicts the held-out terminal observation.
//! Replications are independent streams evaluated in parallel; per-method
//! wall-clock is recorded alongside the errors.

use nalgebra::DVector;

use crate::baselines;
use crate::error::{PwdError, Result};
use crate::hier::{
    estimate_alpha_sep, estimate_alphas_plugin, fit_predict_terminal, hier_default_grid,
    GibbsConfig,
};
use crate::hier::plugin::plugin_step;
use crate::normal;
use crate::par;
use crate::regression::WeightedRegStats;
use crate::synthetic::{gen_hier_capm, gen_stationary_rep, HierCapmConfig, StationaryMeanConfig};

/// Univariate methods entering the stationary-mean study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniMethod {
    StationaryMean,
    Pwd,
    Ewma,
    StateSpace,
}

impl UniMethod {
    pub fn name(&self) -> &'static str {
        match self {
            UniMethod::StationaryMean => "stationary",
            UniMethod::Pwd => "pwd",
            UniMethod::Ewma => "ewma",
            UniMethod::StateSpace => "state-space",
        }
    }

    pub fn all() -> Vec<UniMethod> {
        vec![UniMethod::StationaryMean, UniMethod::Pwd, UniMethod::Ewma, UniMethod::StateSpace]
    }
}

/// Outcome of the stationary-mean study.
#[derive(Debug, Clone)]
pub struct UniStudyResult {
    pub methods: Vec<String>,
    /// Root of the mean squared terminal-prediction error across
    /// replications.
    pub rmse: Vec<f64>,
    /// Delta-method standard error of each root.
    pub se: Vec<f64>,
    /// Mean wall-clock per fit, milliseconds.
    pub mean_time_ms: Vec<f64>,
    /// `sq_errors[m][r]`: squared terminal error of method `m` in
    /// replication `r`.
    pub sq_errors: Vec<Vec<f64>>,
}

/// Trains each method on the first `T - 1` points of every replication and
/// scores the prediction of the held-out terminal point.
pub fn stationary_mean_study(
    cfg: &StationaryMeanConfig,
    methods: &[UniMethod],
) -> Result<UniStudyResult> {
    if methods.is_empty() {
        return Err(PwdError::InvalidParameter("no methods requested".into()));
    }
    if cfg.t < 12 {
        return Err(PwdError::InsufficientData { needed: 12, got: cfg.t });
    }
    let grid = normal::default_grid();
    let per_rep: Vec<Result<Vec<(f64, f64)>>> = par::map_indexed(cfg.replications, |r| {
        let series = gen_stationary_rep(cfg, r as u64)?;
        let train = &series[..cfg.t - 1];
        let target = series[cfg.t - 1];
        methods
            .iter()
            .map(|m| {
                let t0 = std::time::Instant::now();
                let pred = match m {
                    UniMethod::StationaryMean => {
                        train.iter().sum::<f64>() / train.len() as f64
                    }
                    UniMethod::Pwd => {
                        let est = normal::estimate_alpha(train, &grid, |_| 0.0)?;
                        normal::predictive(train, est.alpha_star)?.mean()
                    }
                    UniMethod::Ewma => baselines::ewma_fit(train)?.forecast,
                    UniMethod::StateSpace => {
                        baselines::local_level_filter(
                            train,
                            baselines::LocalLevelMode::MleVariances,
                        )?
                        .forecast
                    }
                };
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                let err = target - pred;
                Ok((err * err, ms))
            })
            .collect()
    });

    let mut sq_errors = vec![Vec::with_capacity(cfg.replications); methods.len()];
    let mut time_ms = vec![0.0; methods.len()];
    for rep in per_rep {
        for (mi, (sq, ms)) in rep?.into_iter().enumerate() {
            sq_errors[mi].push(sq);
            time_ms[mi] += ms;
        }
    }
    let reps = cfg.replications as f64;
    let rmse: Vec<f64> =
        sq_errors.iter().map(|e| (e.iter().sum::<f64>() / reps).sqrt()).collect();
    let se = sq_errors
        .iter()
        .zip(&rmse)
        .map(|(e, &r)| {
            let mean_sq = r * r;
            let var = e.iter().map(|v| (v - mean_sq) * (v - mean_sq)).sum::<f64>()
                / (reps - 1.0);
            // Delta method for the square root of a mean.
            (var / reps).sqrt() / (2.0 * r)
        })
        .collect();
    Ok(UniStudyResult {
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        rmse,
        se,
        mean_time_ms: time_ms.iter().map(|t| t / reps).collect(),
        sq_errors,
    })
}

/// Panel methods entering the drifting-sensitivity studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelMethod {
    Stationary,
    StationaryHier,
    SepPwd,
    HierPwd,
    StateSpaceLr,
}

impl PanelMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PanelMethod::Stationary => "stationary",
            PanelMethod::StationaryHier => "stationary-hier",
            PanelMethod::SepPwd => "sep-pwd",
            PanelMethod::HierPwd => "hier-pwd",
            PanelMethod::StateSpaceLr => "state-space-lr",
        }
    }

    pub fn all() -> Vec<PanelMethod> {
        vec![
            PanelMethod::HierPwd,
            PanelMethod::SepPwd,
            PanelMethod::StateSpaceLr,
            PanelMethod::Stationary,
            PanelMethod::StationaryHier,
        ]
    }
}

/// Outcome of a panel study.
#[derive(Debug, Clone)]
pub struct PanelStudyResult {
    pub methods: Vec<String>,
    /// Mean over replications of the per-replication cross-group root mean
    /// squared terminal error.
    pub mean_rmse: Vec<f64>,
    /// Standard error of that mean.
    pub se_rmse: Vec<f64>,
    pub mean_time_ms: Vec<f64>,
    /// `per_rep_rmse[m][r]`.
    pub per_rep_rmse: Vec<Vec<f64>>,
}

/// Runs the panel study: per replication, each method fits the first `T - 1`
/// rows of every group and predicts the terminal row from its covariates.
pub fn hier_capm_study(
    cfg: &HierCapmConfig,
    replications: usize,
    methods: &[PanelMethod],
    gibbs: &GibbsConfig,
) -> Result<PanelStudyResult> {
    if methods.is_empty() {
        return Err(PwdError::InvalidParameter("no methods requested".into()));
    }
    let p = if cfg.include_intercept { 2 } else { 1 };
    if cfg.t < 3 * p + 2 || cfg.t < p + 4 {
        return Err(PwdError::InsufficientData { needed: 3 * p + 2, got: cfg.t });
    }
    let grid = hier_default_grid(p);

    let per_rep: Vec<Result<Vec<(f64, f64)>>> = par::map_indexed(replications, |r| {
        let sim = gen_hier_capm(cfg, r as u64)?;
        let panel = &sim.panel;
        let j = panel.num_groups();
        let t_end = panel.periods() - 1;
        let gibbs_rep = GibbsConfig {
            seed: crate::hier::derive_stream(gibbs.seed, r as u64),
            ..*gibbs
        };

        methods
            .iter()
            .map(|m| {
                let t0 = std::time::Instant::now();
                let mut sq_sum = 0.0;
                match m {
                    PanelMethod::Stationary => {
                        for gi in 0..j {
                            let g = panel.group(gi);
                            let x = g.x.rows(0, t_end).into_owned();
                            let y = DVector::from_fn(t_end, |row, _| g.y[row]);
                            let fit = crate::regression::ols(&x, &y)?;
                            let pred = fit.predict(&g.x.row(t_end).transpose());
                            sq_sum += (g.y[t_end] - pred).powi(2);
                        }
                    }
                    PanelMethod::StationaryHier | PanelMethod::HierPwd => {
                        let alphas = if matches!(m, PanelMethod::HierPwd) {
                            estimate_alphas_plugin(panel, t_end, &grid, &gibbs_rep)?.alphas()
                        } else {
                            vec![1.0; j]
                        };
                        let x_next: Vec<DVector<f64>> = (0..j)
                            .map(|gi| panel.group(gi).x.row(t_end).transpose())
                            .collect();
                        let fit = fit_predict_terminal(
                            panel,
                            t_end,
                            &alphas,
                            Some(&x_next),
                            &gibbs_rep,
                        )?;
                        for (gi, gp) in fit.groups.iter().enumerate() {
                            let g = panel.group(gi);
                            let pred = gp.beta_mean.dot(&g.x.row(t_end).transpose());
                            sq_sum += (g.y[t_end] - pred).powi(2);
                        }
                    }
                    PanelMethod::SepPwd => {
                        for gi in 0..j {
                            let g = panel.group(gi);
                            let est = estimate_alpha_sep(&g.x, &g.y, t_end, &grid)?;
                            let stats = WeightedRegStats::from_rows(
                                &g.x,
                                &g.y,
                                t_end,
                                est.alpha_star,
                            )?;
                            let step = plugin_step(&stats, None, None)?;
                            let pred = step.beta.dot(&g.x.row(t_end).transpose());
                            sq_sum += (g.y[t_end] - pred).powi(2);
                        }
                    }
                    PanelMethod::StateSpaceLr => {
                        for gi in 0..j {
                            let g = panel.group(gi);
                            let x = g.x.rows(0, t_end).into_owned();
                            let y = DVector::from_fn(t_end, |row, _| g.y[row]);
                            let fit = baselines::state_space_lr_fit(&x, &y)?;
                            let pred = fit.predict(&g.x.row(t_end).transpose());
                            sq_sum += (g.y[t_end] - pred).powi(2);
                        }
                    }
                }
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                Ok(((sq_sum / j as f64).sqrt(), ms))
            })
            .collect()
    });

    let mut per_rep_rmse = vec![Vec::with_capacity(replications); methods.len()];
    let mut time_ms = vec![0.0; methods.len()];
    for rep in per_rep {
        for (mi, (rmse, ms)) in rep?.into_iter().enumerate() {
            per_rep_rmse[mi].push(rmse);
            time_ms[mi] += ms;
        }
    }
    let reps = replications as f64;
    let mean_rmse: Vec<f64> =
        per_rep_rmse.iter().map(|v| v.iter().sum::<f64>() / reps).collect();
    let se_rmse = per_rep_rmse
        .iter()
        .zip(&mean_rmse)
        .map(|(v, &m)| {
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (reps - 1.0);
            (var / reps).sqrt()
        })
        .collect();
    Ok(PanelStudyResult {
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        mean_rmse,
        se_rmse,
        mean_time_ms: time_ms.iter().map(|t| t / reps).collect(),
        per_rep_rmse,
    })
}
