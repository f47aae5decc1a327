//! Forecasting methods adapted to the rolling one-step-ahead protocol.
//!
//! Each adapter carries whatever state lets it predict the next observation
//! from data strictly before it: incremental weighted statistics for the
//! decay-weighted methods, frozen optimizer output for the likelihood-fitted
//! baselines. Expensive re-estimation (decay grids, shrinkage refits, MA and
//! state-space optimizers) happens only on refit steps; between refits the
//! last fit is reused with updated sufficient statistics.

use nalgebra::DVector;

use crate::baselines;
use crate::bma::{enumerate_models, BmaConfig, BmaGroupState};
use crate::error::{PwdError, Result};
use crate::hier::{
    estimate_alpha_sep, estimate_alphas_plugin, fit_predict_terminal, GibbsConfig, GlobalParams,
    PanelData,
};
use crate::hier::plugin::plugin_step;
use crate::normal;
use crate::regression::WeightedRegStats;
use crate::weights::WeightedMoments;

/// Which forecasting method to run through the backtest.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    /// Sample mean of the history (univariate).
    StationaryMean,
    /// Decay-weighted normal model with estimated decay (univariate).
    NormalPwd,
    /// ARIMA(0,1,1) maximum likelihood (univariate).
    Ewma,
    /// Local-level state-space model by maximum likelihood (univariate).
    LocalLevel,
    /// Per-group least squares on the full history.
    StationaryOls,
    /// Hierarchical regression with unit decay (stationary pooling).
    StationaryHier,
    /// Per-group decay-weighted regression, no pooling.
    SepPwd,
    /// Hierarchical decay-weighted regression.
    HierPwd,
    /// Model averaging over factor subsets of the design (columns beyond the
    /// leading intercept).
    SepPwdBma,
    /// Least squares over a trailing window of this many observations.
    RollingWindow { window: usize },
    /// Random-walk-coefficient regression by maximum likelihood.
    StateSpaceLr,
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::StationaryMean => "stationary-mean".into(),
            MethodSpec::NormalPwd => "pwd".into(),
            MethodSpec::Ewma => "ewma".into(),
            MethodSpec::LocalLevel => "state-space".into(),
            MethodSpec::StationaryOls => "stationary".into(),
            MethodSpec::StationaryHier => "stationary-hier".into(),
            MethodSpec::SepPwd => "sep-pwd".into(),
            MethodSpec::HierPwd => "hier-pwd".into(),
            MethodSpec::SepPwdBma => "sep-pwd-bma".into(),
            MethodSpec::RollingWindow { window } => format!("window-{window}"),
            MethodSpec::StateSpaceLr => "state-space-lr".into(),
        }
    }

    /// Parses the names produced by [`name`](Self::name).
    pub fn parse(s: &str) -> Result<Self> {
        let spec = match s {
            "stationary-mean" => MethodSpec::StationaryMean,
            "pwd" => MethodSpec::NormalPwd,
            "ewma" => MethodSpec::Ewma,
            "state-space" => MethodSpec::LocalLevel,
            "stationary" => MethodSpec::StationaryOls,
            "stationary-hier" => MethodSpec::StationaryHier,
            "sep-pwd" => MethodSpec::SepPwd,
            "hier-pwd" => MethodSpec::HierPwd,
            "sep-pwd-bma" => MethodSpec::SepPwdBma,
            "state-space-lr" => MethodSpec::StateSpaceLr,
            other => {
                if let Some(w) = other.strip_prefix("window-") {
                    let window: usize = w
                        .parse()
                        .map_err(|_| PwdError::UnknownName(format!("method {other}")))?;
                    MethodSpec::RollingWindow { window }
                } else {
                    return Err(PwdError::UnknownName(format!("method {other}")));
                }
            }
        };
        Ok(spec)
    }

    /// Minimum history rows before the first prediction.
    pub fn min_history(&self, p: usize) -> usize {
        match self {
            MethodSpec::StationaryMean => 2,
            MethodSpec::NormalPwd => 8,
            MethodSpec::Ewma | MethodSpec::LocalLevel => 10,
            MethodSpec::StationaryOls => p + 2,
            MethodSpec::StationaryHier | MethodSpec::SepPwd | MethodSpec::HierPwd => p + 3,
            MethodSpec::SepPwdBma => p + 3,
            MethodSpec::RollingWindow { window } => (*window).max(p + 2),
            MethodSpec::StateSpaceLr => 3 * p + 1,
        }
    }
}

/// One method's prediction for one group at one target time, with optional
/// diagnostics for trajectory extraction.
#[derive(Debug, Clone)]
pub struct StepPrediction {
    pub value: f64,
    pub alpha: Option<f64>,
    pub coefficients: Option<Vec<f64>>,
    /// Per-factor inclusion probabilities (model-averaging methods only).
    pub inclusion: Option<Vec<f64>>,
}

impl StepPrediction {
    fn bare(value: f64) -> Self {
        Self { value, alpha: None, coefficients: None, inclusion: None }
    }
}

pub(crate) enum MethodState {
    StationaryMean,
    NormalPwd {
        grid: Vec<f64>,
        alphas: Vec<f64>,
        moments: Vec<WeightedMoments>,
        cursor: usize,
    },
    Ewma {
        thetas: Vec<Option<f64>>,
    },
    LocalLevel {
        ratios: Vec<Option<(f64, f64)>>, // (v, w)
    },
    StationaryOls,
    StationaryHier {
        gibbs: GibbsConfig,
        state: HierState,
    },
    SepPwd {
        grid: Vec<f64>,
        alphas: Vec<f64>,
        stats: Vec<WeightedRegStats>,
        warm: Vec<Option<f64>>,
        cursor: usize,
    },
    HierPwd {
        grid: Vec<f64>,
        gibbs: GibbsConfig,
        state: HierState,
    },
    SepPwdBma {
        states: Vec<BmaGroupState>,
        num_factors: usize,
    },
    RollingWindow {
        window: usize,
    },
    StateSpaceLr {
        params: Vec<Option<(f64, f64)>>, // (v, w_scale)
    },
}

/// Shared rolling state for the pooled methods: per-group decays, incremental
/// weighted statistics, and the last shrinkage plug-ins.
pub(crate) struct HierState {
    alphas: Vec<f64>,
    stats: Vec<WeightedRegStats>,
    warm: Vec<Option<f64>>,
    prior: Option<GlobalParams>,
    cursor: usize,
    /// Gibbs posterior coefficient means from the last refit, used at the
    /// refit step itself.
    gibbs_means: Option<Vec<DVector<f64>>>,
}

impl HierState {
    fn new(j: usize, p: usize) -> Self {
        Self {
            alphas: vec![1.0; j],
            stats: (0..j).map(|_| WeightedRegStats::new(p)).collect(),
            warm: vec![None; j],
            prior: None,
            cursor: 0,
            gibbs_means: None,
        }
    }

    fn rebuild(&mut self, panel: &PanelData, upto: usize) {
        for (gi, g) in panel.groups().iter().enumerate() {
            let mut stats = WeightedRegStats::new(panel.covariates());
            for t in 0..upto {
                stats.push_row(&g.x.row(t).transpose(), g.y[t], self.alphas[gi]);
            }
            self.stats[gi] = stats;
            self.warm[gi] = None;
        }
        self.cursor = upto;
    }

    fn advance(&mut self, panel: &PanelData, upto: usize) {
        for (gi, g) in panel.groups().iter().enumerate() {
            for t in self.cursor..upto {
                self.stats[gi].push_row(&g.x.row(t).transpose(), g.y[t], self.alphas[gi]);
            }
        }
        self.cursor = upto;
    }
}

pub(crate) fn build_state(
    spec: &MethodSpec,
    panel: &PanelData,
    gibbs: &GibbsConfig,
    grid: Option<&[f64]>,
) -> MethodState {
    let j = panel.num_groups();
    let p = panel.covariates();
    let own_grid =
        |fallback: Vec<f64>| grid.map(|g| g.to_vec()).unwrap_or(fallback);
    match spec {
        MethodSpec::StationaryMean => MethodState::StationaryMean,
        MethodSpec::NormalPwd => MethodState::NormalPwd {
            grid: own_grid(normal::default_grid()),
            alphas: vec![1.0; j],
            moments: vec![WeightedMoments::new(); j],
            cursor: 0,
        },
        MethodSpec::Ewma => MethodState::Ewma { thetas: vec![None; j] },
        MethodSpec::LocalLevel => MethodState::LocalLevel { ratios: vec![None; j] },
        MethodSpec::StationaryOls => MethodState::StationaryOls,
        MethodSpec::StationaryHier => {
            MethodState::StationaryHier { gibbs: *gibbs, state: HierState::new(j, p) }
        }
        MethodSpec::SepPwd => MethodState::SepPwd {
            grid: own_grid(crate::hier::hier_default_grid(p)),
            alphas: vec![1.0; j],
            stats: (0..j).map(|_| WeightedRegStats::new(p)).collect(),
            warm: vec![None; j],
            cursor: 0,
        },
        MethodSpec::HierPwd => MethodState::HierPwd {
            grid: own_grid(crate::hier::hier_default_grid(p)),
            gibbs: *gibbs,
            state: HierState::new(j, p),
        },
        MethodSpec::SepPwdBma => {
            MethodState::SepPwdBma { states: Vec::new(), num_factors: p.saturating_sub(1) }
        }
        MethodSpec::RollingWindow { window } => MethodState::RollingWindow { window: *window },
        MethodSpec::StateSpaceLr => MethodState::StateSpaceLr { params: vec![None; j] },
    }
}

/// Predicts the response of every group at target time `s` from panel rows
/// `0..s` (plus the covariate row at `s`). `refit` re-runs the expensive
/// estimation steps; otherwise the last fit is reused against updated
/// statistics.
pub(crate) fn predict_step(
    state: &mut MethodState,
    panel: &PanelData,
    s: usize,
    refit: bool,
    refit_cadence: usize,
) -> Vec<Result<StepPrediction>> {
    let j = panel.num_groups();
    let p = panel.covariates();
    match state {
        MethodState::StationaryMean => crate::par::map_indexed(j, |gi| {
            let y = &panel.group(gi).y;
            let mean = (0..s).map(|t| y[t]).sum::<f64>() / s as f64;
            Ok(StepPrediction::bare(mean))
        }),
        MethodState::NormalPwd { grid, alphas, moments, cursor } => {
            if refit {
                let fits: Vec<Result<f64>> = crate::par::map_indexed(j, |gi| {
                    let series: Vec<f64> =
                        (0..s).map(|t| panel.group(gi).y[t]).collect();
                    Ok(normal::estimate_alpha(&series, grid, |_| 0.0)?.alpha_star)
                });
                for (gi, fit) in fits.into_iter().enumerate() {
                    match fit {
                        Ok(a) => {
                            alphas[gi] = a;
                            let mut m = WeightedMoments::new();
                            for t in 0..s {
                                let _ = m.push(panel.group(gi).y[t], a);
                            }
                            moments[gi] = m;
                        }
                        Err(e) => return vec![Err(e); j],
                    }
                }
                *cursor = s;
            } else {
                for gi in 0..j {
                    for t in *cursor..s {
                        let _ = moments[gi].push(panel.group(gi).y[t], alphas[gi]);
                    }
                }
                *cursor = s;
            }
            (0..j)
                .map(|gi| {
                    Ok(StepPrediction {
                        value: moments[gi].wmean(),
                        alpha: Some(alphas[gi]),
                        coefficients: None,
                        inclusion: None,
                    })
                })
                .collect()
        }
        MethodState::Ewma { thetas } => {
            let frozen = thetas.clone();
            let out: Vec<Result<(f64, f64)>> = crate::par::map_indexed(j, |gi| {
                let series: Vec<f64> = (0..s).map(|t| panel.group(gi).y[t]).collect();
                if refit || frozen[gi].is_none() {
                    let fit = baselines::ewma_fit(&series)?;
                    Ok((fit.theta, fit.forecast))
                } else {
                    let theta = frozen[gi].expect("frozen parameter present");
                    Ok((theta, baselines::ewma_forecast_at(&series, theta)?))
                }
            });
            out.into_iter()
                .enumerate()
                .map(|(gi, r)| {
                    r.map(|(theta, forecast)| {
                        thetas[gi] = Some(theta);
                        StepPrediction::bare(forecast)
                    })
                })
                .collect()
        }
        MethodState::LocalLevel { ratios } => {
            let frozen = ratios.clone();
            let out: Vec<Result<((f64, f64), f64)>> = crate::par::map_indexed(j, |gi| {
                let series: Vec<f64> = (0..s).map(|t| panel.group(gi).y[t]).collect();
                if refit || frozen[gi].is_none() {
                    let fit =
                        baselines::local_level_filter(&series, baselines::LocalLevelMode::MleVariances)?;
                    Ok(((fit.v, fit.w_or_delta), fit.forecast))
                } else {
                    let (v, w) = frozen[gi].expect("frozen parameters present");
                    let fit = baselines::local_level_filter_known(&series, v, w)?;
                    Ok(((v, w), fit.forecast))
                }
            });
            out.into_iter()
                .enumerate()
                .map(|(gi, r)| {
                    r.map(|(vw, forecast)| {
                        ratios[gi] = Some(vw);
                        StepPrediction::bare(forecast)
                    })
                })
                .collect()
        }
        MethodState::StationaryOls => crate::par::map_indexed(j, |gi| {
            let g = panel.group(gi);
            let x = g.x.rows(0, s).into_owned();
            let y = DVector::from_fn(s, |r, _| g.y[r]);
            let fit = crate::regression::ols(&x, &y)?;
            Ok(StepPrediction {
                value: fit.predict(&g.x.row(s).transpose()),
                alpha: None,
                coefficients: Some(fit.beta.iter().copied().collect()),
                inclusion: None,
            })
        }),
        MethodState::RollingWindow { window } => crate::par::map_indexed(j, |gi| {
            let g = panel.group(gi);
            let x = g.x.rows(0, s).into_owned();
            let y = DVector::from_fn(s, |r, _| g.y[r]);
            let fit = baselines::rolling_window_fit(&x, &y, *window)?;
            Ok(StepPrediction {
                value: fit.predict(&g.x.row(s).transpose()),
                alpha: None,
                coefficients: Some(fit.beta.iter().copied().collect()),
                inclusion: None,
            })
        }),
        MethodState::StateSpaceLr { params } => {
            let frozen = params.clone();
            let out: Vec<Result<((f64, f64), StepPrediction)>> = crate::par::map_indexed(j, |gi| {
                let g = panel.group(gi);
                let x = g.x.rows(0, s).into_owned();
                let y = DVector::from_fn(s, |r, _| g.y[r]);
                let fit = if refit || frozen[gi].is_none() {
                    baselines::state_space_lr_fit(&x, &y)?
                } else {
                    let (v, w) = frozen[gi].expect("frozen parameters present");
                    baselines::state_space_lr_fit_known(&x, &y, v, w)?
                };
                Ok((
                    (fit.v, fit.w_scale),
                    StepPrediction {
                        value: fit.predict(&g.x.row(s).transpose()),
                        alpha: None,
                        coefficients: Some(fit.beta.iter().copied().collect()),
                        inclusion: None,
                    },
                ))
            });
            out.into_iter()
                .enumerate()
                .map(|(gi, r)| {
                    r.map(|(vw, pred)| {
                        params[gi] = Some(vw);
                        pred
                    })
                })
                .collect()
        }
        MethodState::SepPwd { grid, alphas, stats, warm, cursor } => {
            if refit {
                let fits: Vec<Result<f64>> = crate::par::map_indexed(j, |gi| {
                    let g = panel.group(gi);
                    Ok(estimate_alpha_sep(&g.x, &g.y, s, grid)?.alpha_star)
                });
                for (gi, fit) in fits.into_iter().enumerate() {
                    match fit {
                        Ok(a) => {
                            alphas[gi] = a;
                            let g = panel.group(gi);
                            let mut st = WeightedRegStats::new(p);
                            for t in 0..s {
                                st.push_row(&g.x.row(t).transpose(), g.y[t], a);
                            }
                            stats[gi] = st;
                            warm[gi] = None;
                        }
                        Err(e) => return vec![Err(e); j],
                    }
                }
                *cursor = s;
            } else {
                for gi in 0..j {
                    let g = panel.group(gi);
                    for t in *cursor..s {
                        stats[gi].push_row(&g.x.row(t).transpose(), g.y[t], alphas[gi]);
                    }
                }
                *cursor = s;
            }
            (0..j)
                .map(|gi| {
                    let step = plugin_step(&stats[gi], None, warm[gi])?;
                    warm[gi] = Some(step.sigma2);
                    let xn = panel.group(gi).x.row(s).transpose();
                    Ok(StepPrediction {
                        value: step.beta.dot(&xn),
                        alpha: Some(alphas[gi]),
                        coefficients: Some(step.beta.iter().copied().collect()),
                        inclusion: None,
                    })
                })
                .collect()
        }
        MethodState::StationaryHier { gibbs, state } => {
            hier_predict(panel, s, refit, None, gibbs, state, true)
        }
        MethodState::HierPwd { grid, gibbs, state } => {
            hier_predict(panel, s, refit, Some(grid), gibbs, state, false)
        }
        MethodState::SepPwdBma { states, num_factors } => {
            let models = match enumerate_models(*num_factors) {
                Ok(m) => m,
                Err(e) => return vec![Err(e); j],
            };
            if states.is_empty() {
                let cfg = BmaConfig { grid: None, refresh_every: refit_cadence };
                for gi in 0..j {
                    let g = panel.group(gi);
                    match BmaGroupState::new(&g.x, &g.y, &models, &cfg, s) {
                        Ok(st) => states.push(st),
                        Err(e) => return vec![Err(e); j],
                    }
                }
            }
            states
                .iter_mut()
                .enumerate()
                .map(|(gi, st)| {
                    while st.cursor() < s {
                        st.step()?;
                    }
                    let xn = panel.group(gi).x.row(s).transpose();
                    let mix = st.predict_mixture(&xn)?;
                    let weights = st.weights();
                    let inclusion: Vec<f64> = (0..*num_factors)
                        .map(|f| {
                            weights
                                .iter()
                                .zip(&models)
                                .filter(|(_, m)| m.includes(f))
                                .map(|(w, _)| *w)
                                .sum()
                        })
                        .collect();
                    Ok(StepPrediction {
                        value: mix.mean(),
                        alpha: None,
                        coefficients: None,
                        inclusion: Some(inclusion),
                    })
                })
                .collect()
        }
    }
}

/// Shared prediction logic for the pooled methods. On refit steps the decays
/// (unless pinned at one) and shrinkage plug-ins are re-estimated and a Gibbs
/// sweep supplies posterior-mean coefficients; between refits the last
/// shrinkage prior is applied to the updated weighted statistics.
#[allow(clippy::too_many_arguments)]
fn hier_predict(
    panel: &PanelData,
    s: usize,
    refit: bool,
    grid: Option<&[f64]>,
    gibbs: &GibbsConfig,
    state: &mut HierState,
    pin_unit_decay: bool,
) -> Vec<Result<StepPrediction>> {
    let j = panel.num_groups();
    if refit || state.prior.is_none() {
        if let Some(grid) = grid {
            if !pin_unit_decay {
                match estimate_alphas_plugin(panel, s, grid, gibbs) {
                    Ok(fit) => {
                        state.alphas = fit.alphas();
                        state.prior = Some(fit.plugin_prior);
                    }
                    Err(e) => return vec![Err(e); j],
                }
            }
        }
        match fit_predict_terminal(panel, s, &state.alphas, None, gibbs) {
            Ok(fit) => {
                if j >= 2 {
                    let beta0 = fit.beta0_mean.clone();
                    let tau2 = fit.tau2_mean.clone();
                    match GlobalParams::new(beta0, tau2) {
                        Ok(g) => state.prior = Some(g),
                        Err(e) => return vec![Err(e); j],
                    }
                }
                state.gibbs_means =
                    Some(fit.groups.iter().map(|g| g.beta_mean.clone()).collect());
            }
            Err(e) => return vec![Err(e); j],
        }
        state.rebuild(panel, s);
        let means = state.gibbs_means.as_ref().expect("set on refit");
        return (0..j)
            .map(|gi| {
                let xn = panel.group(gi).x.row(s).transpose();
                Ok(StepPrediction {
                    value: means[gi].dot(&xn),
                    alpha: Some(state.alphas[gi]),
                    coefficients: Some(means[gi].iter().copied().collect()),
                    inclusion: None,
                })
            })
            .collect();
    }
    state.advance(panel, s);
    let prior = state.prior.clone();
    (0..j)
        .map(|gi| {
            let step = plugin_step(&state.stats[gi], prior.as_ref(), state.warm[gi])?;
            state.warm[gi] = Some(step.sigma2);
            let xn = panel.group(gi).x.row(s).transpose();
            Ok(StepPrediction {
                value: step.beta.dot(&xn),
                alpha: Some(state.alphas[gi]),
                coefficients: Some(step.beta.iter().copied().collect()),
                inclusion: None,
            })
        })
        .collect()
}
