//! Rolling one-step-ahead evaluation: each method is fit on data through
//! time `t` and predicts the response at `t + 1` given the covariates
//! observed there. Squared prediction errors accumulate per group and in
//! total; a time point where any method fails to produce every group's
//! prediction is excluded from every method's comparative aggregates, so all
//! cumulative paths sum over identical slices.

mod methods;
mod simstudy;
mod stats;

pub use methods::{MethodSpec, StepPrediction};
pub use simstudy::{
    hier_capm_study, stationary_mean_study, PanelMethod, PanelStudyResult, UniMethod,
    UniStudyResult,
};
pub use stats::{welch_ttest, TTestResult};

use crate::error::{PwdError, Result};
use crate::hier::{GibbsConfig, PanelData};

/// Rolling evaluation configuration.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// First target time index: the earliest response the methods predict.
    pub start: usize,
    /// Re-run expensive estimation every this many steps (1 = every step).
    pub refit_every: usize,
    /// Sampler settings for the pooled methods.
    pub gibbs: GibbsConfig,
    /// Decay grid override for the decay-weighted methods.
    pub grid: Option<Vec<f64>>,
    /// Index into the method list of the cumulative-error benchmark.
    pub benchmark: usize,
    /// Record per-step decay, coefficient, and inclusion trajectories.
    pub record_trajectories: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            start: 0,
            refit_every: 1,
            gibbs: GibbsConfig::default(),
            grid: None,
            benchmark: 0,
            record_trajectories: true,
        }
    }
}

/// A prediction the method could not produce.
#[derive(Debug, Clone)]
pub struct MissRecord {
    pub method: String,
    pub time: usize,
    pub group: String,
    pub reason: String,
}

/// Per-method aggregate over the symmetric (all-methods-valid) time set.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub name: String,
    /// Mean squared prediction error over valid (time, group) cells.
    pub mean_spe: f64,
    /// Standard error of the per-group mean errors.
    pub se_across_groups: f64,
    /// Total cumulative squared error at the end of the run.
    pub total_sspe: f64,
    /// Welch p-value of the per-group means against the best method
    /// (`None` for the best method itself or single-group panels).
    pub p_vs_best: Option<f64>,
    /// Average wall-clock per prediction step, milliseconds.
    pub mean_step_ms: f64,
}

/// Full record of a rolling evaluation.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub method_names: Vec<String>,
    pub group_names: Vec<String>,
    /// Target time indices (into the panel) and their dates.
    pub target_times: Vec<usize>,
    pub dates: Vec<u32>,
    /// `predictions[m][i][g]`: method `m`'s prediction for target `i`.
    pub predictions: Vec<Vec<Vec<Option<f64>>>>,
    /// Squared prediction errors, same shape.
    pub spe: Vec<Vec<Vec<Option<f64>>>>,
    /// Whether every method produced every group at this target.
    pub valid: Vec<bool>,
    /// `sspe[m][i]`: cumulative squared error over valid targets through `i`.
    pub sspe: Vec<Vec<f64>>,
    /// Cumulative difference against the benchmark method.
    pub delta_sspe: Vec<Vec<f64>>,
    pub benchmark: usize,
    pub summaries: Vec<MethodSummary>,
    pub misses: Vec<MissRecord>,
    /// `alpha_traj[m]`, when recorded: per target per group decay.
    pub alpha_traj: Vec<Option<Vec<Vec<Option<f64>>>>>,
    /// Coefficient vectors per target per group.
    pub coef_traj: Vec<Option<Vec<Vec<Option<Vec<f64>>>>>>,
    /// Factor inclusion probabilities per target per group.
    pub incl_traj: Vec<Option<Vec<Vec<Option<Vec<f64>>>>>>,
}

/// Runs every method through the rolling protocol.
pub fn run_backtest(
    panel: &PanelData,
    specs: &[MethodSpec],
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    if specs.is_empty() {
        return Err(PwdError::InvalidParameter("no methods requested".into()));
    }
    if config.benchmark >= specs.len() {
        return Err(PwdError::InvalidParameter(format!(
            "benchmark index {} out of range",
            config.benchmark
        )));
    }
    if config.refit_every == 0 {
        return Err(PwdError::InvalidParameter("refit cadence must be positive".into()));
    }
    let p = panel.covariates();
    let horizon = panel.periods();
    let needed = specs.iter().map(|m| m.min_history(p)).max().expect("non-empty");
    if config.start < needed {
        return Err(PwdError::InsufficientData { needed, got: config.start });
    }
    if config.start >= horizon {
        return Err(PwdError::InsufficientData { needed: config.start + 1, got: horizon });
    }

    let j = panel.num_groups();
    let n_methods = specs.len();
    let target_times: Vec<usize> = (config.start..horizon).collect();
    let n_times = target_times.len();

    let mut states: Vec<methods::MethodState> = specs
        .iter()
        .map(|m| methods::build_state(m, panel, &config.gibbs, config.grid.as_deref()))
        .collect();

    let mut predictions = vec![vec![vec![None; j]; n_times]; n_methods];
    let mut spe = vec![vec![vec![None; j]; n_times]; n_methods];
    let mut alpha_traj = vec![vec![vec![None; j]; n_times]; n_methods];
    let mut coef_traj: Vec<Vec<Vec<Option<Vec<f64>>>>> =
        vec![vec![vec![None; j]; n_times]; n_methods];
    let mut incl_traj: Vec<Vec<Vec<Option<Vec<f64>>>>> =
        vec![vec![vec![None; j]; n_times]; n_methods];
    let mut misses = Vec::new();
    let mut step_ms = vec![0.0; n_methods];

    for (i, &s) in target_times.iter().enumerate() {
        let refit = i % config.refit_every == 0;
        for (mi, state) in states.iter_mut().enumerate() {
            let t0 = std::time::Instant::now();
            let preds = methods::predict_step(state, panel, s, refit, config.refit_every);
            step_ms[mi] += t0.elapsed().as_secs_f64() * 1e3;
            for (gi, pred) in preds.into_iter().enumerate() {
                match pred {
                    Ok(pr) => {
                        let err = panel.group(gi).y[s] - pr.value;
                        predictions[mi][i][gi] = Some(pr.value);
                        spe[mi][i][gi] = Some(err * err);
                        if config.record_trajectories {
                            alpha_traj[mi][i][gi] = pr.alpha;
                            coef_traj[mi][i][gi] = pr.coefficients;
                            incl_traj[mi][i][gi] = pr.inclusion;
                        }
                    }
                    Err(e) => misses.push(MissRecord {
                        method: specs[mi].name(),
                        time: s,
                        group: panel.group(gi).name.clone(),
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }

    // Symmetric exclusion: a target counts only when every method produced
    // every group.
    let valid: Vec<bool> = (0..n_times)
        .map(|i| {
            (0..n_methods).all(|mi| (0..j).all(|gi| spe[mi][i][gi].is_some()))
        })
        .collect();

    let mut sspe = vec![vec![0.0; n_times]; n_methods];
    for mi in 0..n_methods {
        let mut acc = 0.0;
        for i in 0..n_times {
            if valid[i] {
                acc += (0..j).map(|gi| spe[mi][i][gi].expect("valid slice")).sum::<f64>();
            }
            sspe[mi][i] = acc;
        }
    }
    let delta_sspe: Vec<Vec<f64>> = (0..n_methods)
        .map(|mi| {
            (0..n_times).map(|i| sspe[mi][i] - sspe[config.benchmark][i]).collect()
        })
        .collect();

    // Per-group mean errors over the valid slice drive the summary stats.
    let n_valid = valid.iter().filter(|&&v| v).count();
    let group_means: Vec<Vec<f64>> = (0..n_methods)
        .map(|mi| {
            (0..j)
                .map(|gi| {
                    if n_valid == 0 {
                        return f64::NAN;
                    }
                    valid
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v)
                        .map(|(i, _)| spe[mi][i][gi].expect("valid slice"))
                        .sum::<f64>()
                        / n_valid as f64
                })
                .collect()
        })
        .collect();
    let mean_spe: Vec<f64> = group_means
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let best = (0..n_methods)
        .min_by(|&a, &b| mean_spe[a].total_cmp(&mean_spe[b]))
        .expect("non-empty");

    let summaries: Vec<MethodSummary> = (0..n_methods)
        .map(|mi| {
            let gm = &group_means[mi];
            let mean = mean_spe[mi];
            let se = if j > 1 {
                let var =
                    gm.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (j - 1) as f64;
                (var / j as f64).sqrt()
            } else {
                0.0
            };
            let p_vs_best = if mi != best && j > 1 {
                welch_ttest(gm, &group_means[best]).ok().map(|r| r.p_value)
            } else {
                None
            };
            MethodSummary {
                name: specs[mi].name(),
                mean_spe: mean,
                se_across_groups: se,
                total_sspe: sspe[mi][n_times - 1],
                p_vs_best,
                mean_step_ms: step_ms[mi] / n_times as f64,
            }
        })
        .collect();

    let dates = target_times.iter().map(|&s| panel.dates()[s]).collect();
    let wrap3 = |v: Vec<Vec<Vec<Option<f64>>>>| {
        v.into_iter()
            .map(|m| {
                let any = m.iter().any(|row| row.iter().any(Option::is_some));
                any.then_some(m)
            })
            .collect()
    };
    let wrapv = |v: Vec<Vec<Vec<Option<Vec<f64>>>>>| {
        v.into_iter()
            .map(|m| {
                let any = m.iter().any(|row| row.iter().any(Option::is_some));
                any.then_some(m)
            })
            .collect()
    };
    Ok(BacktestReport {
        method_names: specs.iter().map(MethodSpec::name).collect(),
        group_names: panel.group_names(),
        target_times,
        dates,
        predictions,
        spe,
        valid,
        sspe,
        delta_sspe,
        benchmark: config.benchmark,
        summaries,
        misses,
        alpha_traj: wrap3(alpha_traj),
        coef_traj: wrapv(coef_traj),
        incl_traj: wrapv(incl_traj),
    })
}

/// Which recorded quantity to pull out of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Estimated decay parameter.
    AlphaStar,
    /// One coefficient component by design-column index.
    BetaComponent(usize),
    /// One factor's inclusion probability by factor index.
    InclusionProb(usize),
}

/// Extracts a raw (unsmoothed) time-indexed trajectory for one method, either
/// a single group's or, with `group = None`, the cross-group average at each
/// time where every group reports.
pub fn trajectory_extract(
    report: &BacktestReport,
    method: &str,
    kind: TrajectoryKind,
    group: Option<usize>,
) -> Result<Vec<(u32, f64)>> {
    let mi = report
        .method_names
        .iter()
        .position(|n| n == method)
        .ok_or_else(|| PwdError::UnknownName(format!("method {method}")))?;
    let j = report.group_names.len();
    if let Some(g) = group {
        if g >= j {
            return Err(PwdError::UnknownName(format!("group index {g}")));
        }
    }
    let pick = |i: usize, gi: usize| -> Option<f64> {
        match kind {
            TrajectoryKind::AlphaStar => {
                report.alpha_traj[mi].as_ref().and_then(|t| t[i][gi])
            }
            TrajectoryKind::BetaComponent(k) => report.coef_traj[mi]
                .as_ref()
                .and_then(|t| t[i][gi].as_ref())
                .and_then(|v| v.get(k).copied()),
            TrajectoryKind::InclusionProb(f) => report.incl_traj[mi]
                .as_ref()
                .and_then(|t| t[i][gi].as_ref())
                .and_then(|v| v.get(f).copied()),
        }
    };
    let recorded = match kind {
        TrajectoryKind::AlphaStar => report.alpha_traj[mi].is_some(),
        TrajectoryKind::BetaComponent(_) => report.coef_traj[mi].is_some(),
        TrajectoryKind::InclusionProb(_) => report.incl_traj[mi].is_some(),
    };
    if !recorded {
        return Err(PwdError::Degenerate(format!(
            "method {method} did not record the requested quantity"
        )));
    }
    let mut out = Vec::new();
    for i in 0..report.target_times.len() {
        let value = match group {
            Some(gi) => pick(i, gi),
            None => {
                let vals: Vec<f64> = (0..j).filter_map(|gi| pick(i, gi)).collect();
                (vals.len() == j).then(|| vals.iter().sum::<f64>() / j as f64)
            }
        };
        if let Some(v) = value {
            out.push((report.dates[i], v));
        }
    }
    Ok(out)
}
