//! Predictive-likelihood model averaging over factor subsets.
//!
//! Every subset of the candidate factors defines a regression model (the
//! intercept is always included). Each model estimates its own decay by
//! maximizing its one-step-ahead plug-in predictive likelihood; the model's
//! weight is then proportional to the exponential of its cumulative
//! predictive log likelihood, normalized per group in log space. Time points
//! are excluded symmetrically: a point enters the cumulative sums only when
//! it is usable for every candidate model, so weights compare identical term
//! sets.

use nalgebra::{DMatrix, DVector};

use crate::dist::StudentTPredictive;
use crate::error::{PwdError, Result};
use crate::hier::plugin::{grid_argmax, plugin_step, usable_mask};
use crate::hier::{hier_default_grid, PanelData};
use crate::par;
use crate::regression::WeightedRegStats;

/// A factor subset; the intercept is implicit in every model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    bits: u32,
    num_factors: usize,
}

impl ModelSpec {
    pub fn includes(&self, factor: usize) -> bool {
        factor < self.num_factors && (self.bits >> factor) & 1 == 1
    }

    /// Indices of the included factors, ascending.
    pub fn factors(&self) -> Vec<usize> {
        (0..self.num_factors).filter(|&f| self.includes(f)).collect()
    }

    /// Design width including the intercept.
    pub fn width(&self) -> usize {
        1 + self.bits.count_ones() as usize
    }

    pub fn label(&self, names: &[String]) -> String {
        let parts = self.factors();
        if parts.is_empty() {
            "intercept".to_string()
        } else {
            parts
                .iter()
                .map(|&f| names.get(f).cloned().unwrap_or_else(|| format!("f{f}")))
                .collect::<Vec<_>>()
                .join("+")
        }
    }
}

/// All `2^F` factor subsets in ascending bit order (the empty set first).
pub fn enumerate_models(num_factors: usize) -> Result<Vec<ModelSpec>> {
    if num_factors > 16 {
        return Err(PwdError::InvalidParameter(format!(
            "at most 16 factors supported, got {num_factors}"
        )));
    }
    Ok((0..(1u32 << num_factors)).map(|bits| ModelSpec { bits, num_factors }).collect())
}

/// Model-averaging configuration.
#[derive(Debug, Clone)]
pub struct BmaConfig {
    /// Decay grid shared by all models; `None` selects each model's default
    /// grid for its design width.
    pub grid: Option<Vec<f64>>,
    /// Rolling evaluations re-optimize each model's decay every this many
    /// steps.
    pub refresh_every: usize,
}

impl Default for BmaConfig {
    fn default() -> Self {
        Self { grid: None, refresh_every: 12 }
    }
}

impl BmaConfig {
    fn grid_for(&self, width: usize) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| hier_default_grid(width))
    }
}

/// Extracts a model's sub-design from the full `[1 | factors...]` design.
fn sub_design(x_full: &DMatrix<f64>, spec: &ModelSpec) -> DMatrix<f64> {
    let rows = x_full.nrows();
    let cols: Vec<usize> = std::iter::once(0).chain(spec.factors().iter().map(|f| f + 1)).collect();
    DMatrix::from_fn(rows, cols.len(), |r, c| x_full[(r, cols[c])])
}

fn sub_row(x_full: &DVector<f64>, spec: &ModelSpec) -> DVector<f64> {
    let cols: Vec<usize> = std::iter::once(0).chain(spec.factors().iter().map(|f| f + 1)).collect();
    DVector::from_fn(cols.len(), |c, _| x_full[cols[c]])
}

/// Per-group model weights from full-sample decay optimization.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub models: Vec<ModelSpec>,
    pub group_names: Vec<String>,
    /// `log_pred_lik[g][k]`: cumulative predictive log likelihood of model
    /// `k` in group `g` at its own optimal decay, over the common term set.
    pub log_pred_lik: Vec<Vec<f64>>,
    /// `probabilities[g][k]`: normalized model probabilities per group.
    pub probabilities: Vec<Vec<f64>>,
    /// `alpha_stars[g][k]`: each model's optimal decay per group.
    pub alpha_stars: Vec<Vec<f64>>,
}

/// Normalizes cumulative log likelihoods into probabilities in log space.
fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // Every model broke down: fall back to the uniform distribution.
        return vec![1.0 / logs.len() as f64; logs.len()];
    }
    let unnorm: Vec<f64> =
        logs.iter().map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|w| w / total).collect()
}

/// The common usable mask for one group: a time point must be usable for
/// every model at its smallest grid decay.
fn common_mask(
    x_full: &DMatrix<f64>,
    y: &DVector<f64>,
    t_end: usize,
    models: &[ModelSpec],
    cfg: &BmaConfig,
) -> Vec<bool> {
    let mut mask = vec![true; t_end];
    for spec in models {
        let x = sub_design(x_full, spec);
        let grid = cfg.grid_for(spec.width());
        let m = usable_mask(&x, y, t_end, grid[0]);
        for (slot, ok) in mask.iter_mut().zip(m) {
            *slot &= ok;
        }
    }
    mask
}

/// Weighs every model by its one-step-ahead predictive record over the first
/// `t_end` panel rows, with per-model decay optimization.
pub fn model_weights(
    panel: &PanelData,
    models: &[ModelSpec],
    t_end: usize,
    cfg: &BmaConfig,
) -> Result<ModelWeights> {
    if models.is_empty() {
        return Err(PwdError::InvalidParameter("no models to average".into()));
    }
    let p = panel.covariates();
    let widest = models.iter().map(ModelSpec::width).max().expect("non-empty");
    if widest > p {
        return Err(PwdError::DimensionMismatch { expected: p, got: widest });
    }
    if t_end > panel.periods() || t_end < widest + 3 {
        return Err(PwdError::InsufficientData { needed: widest + 3, got: t_end });
    }

    let per_group: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_indexed(panel.num_groups(), |gi| {
        let g = panel.group(gi);
        let mask = common_mask(&g.x, &g.y, t_end, models, cfg);
        if !mask.iter().any(|&m| m) {
            return Err(PwdError::Degenerate(format!(
                "group {}: no prediction point usable for every model",
                g.name
            )));
        }
        let mut logs = Vec::with_capacity(models.len());
        let mut stars = Vec::with_capacity(models.len());
        for spec in models {
            let x = sub_design(&g.x, spec);
            let grid = cfg.grid_for(spec.width());
            let est = grid_argmax(&x, &g.y, t_end, &grid, None, &mask)?;
            logs.push(est.log_pred_lik);
            stars.push(est.alpha_star);
        }
        Ok((logs, stars))
    });

    let mut log_pred_lik = Vec::with_capacity(panel.num_groups());
    let mut probabilities = Vec::with_capacity(panel.num_groups());
    let mut alpha_stars = Vec::with_capacity(panel.num_groups());
    for r in per_group {
        let (logs, stars) = r?;
        probabilities.push(normalize_log_weights(&logs));
        log_pred_lik.push(logs);
        alpha_stars.push(stars);
    }
    Ok(ModelWeights {
        models: models.to_vec(),
        group_names: panel.group_names(),
        log_pred_lik,
        probabilities,
        alpha_stars,
    })
}

/// Posterior inclusion probability of one factor: per group and averaged.
pub fn inclusion_probability(weights: &ModelWeights, factor: usize) -> Result<(Vec<f64>, f64)> {
    let known = weights.models.iter().any(|m| m.num_factors > factor);
    if !known {
        return Err(PwdError::UnknownName(format!("factor index {factor}")));
    }
    let per_group: Vec<f64> = weights
        .probabilities
        .iter()
        .map(|probs| {
            probs
                .iter()
                .zip(&weights.models)
                .filter(|(_, m)| m.includes(factor))
                .map(|(w, _)| *w)
                .sum()
        })
        .collect();
    let avg = per_group.iter().sum::<f64>() / per_group.len() as f64;
    Ok((per_group, avg))
}

/// Mixture predictive: weighted per-model Student-t components.
#[derive(Debug, Clone)]
pub struct BmaPredictive {
    pub components: Vec<(f64, StudentTPredictive)>,
}

impl BmaPredictive {
    /// Mixture predictive mean: the weight-weighted component means.
    pub fn mean(&self) -> f64 {
        self.components.iter().map(|(w, c)| w * c.mean()).sum()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.components.iter().map(|(w, c)| w * c.pdf(y)).sum()
    }
}

/// Model-averaged one-step predictive per group, combining each model's
/// plug-in predictive at its optimal decay under the fitted weights.
/// `x_next[g]` is the full `[1 | factors...]` covariate row.
pub fn bma_predict(
    panel: &PanelData,
    t_end: usize,
    weights: &ModelWeights,
    x_next: &[DVector<f64>],
) -> Result<Vec<BmaPredictive>> {
    if x_next.len() != panel.num_groups() {
        return Err(PwdError::DimensionMismatch {
            expected: panel.num_groups(),
            got: x_next.len(),
        });
    }
    let out: Vec<Result<BmaPredictive>> = par::map_indexed(panel.num_groups(), |gi| {
        let g = panel.group(gi);
        let mut components = Vec::with_capacity(weights.models.len());
        for (k, spec) in weights.models.iter().enumerate() {
            let w = weights.probabilities[gi][k];
            let x = sub_design(&g.x, spec);
            let hist = x.rows(0, t_end).into_owned();
            let yv = DVector::from_fn(t_end, |r, _| g.y[r]);
            let pred = crate::hier::plugin_predictive(
                &hist,
                &yv,
                &sub_row(&x_next[gi], spec),
                weights.alpha_stars[gi][k],
                None,
            )?;
            components.push((w, pred));
        }
        Ok(BmaPredictive { components })
    });
    out.into_iter().collect()
}

/// Online model-averaging state for one group: cumulative predictive log
/// likelihoods maintained incrementally, decays re-optimized on a cadence.
pub struct BmaGroupState {
    models: Vec<ModelSpec>,
    designs: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    grids: Vec<Vec<f64>>,
    mask: Vec<bool>,
    alphas: Vec<f64>,
    stats: Vec<WeightedRegStats>,
    cum: Vec<f64>,
    warm_sigma2: Vec<Option<f64>>,
    cursor: usize,
    steps_since_refresh: usize,
    refresh_every: usize,
}

impl BmaGroupState {
    /// Builds the state over one group's full horizon, optimizing each
    /// model's decay on data up to `start` and accumulating the predictive
    /// record from the beginning through `start`.
    pub fn new(
        x_full: &DMatrix<f64>,
        y: &DVector<f64>,
        models: &[ModelSpec],
        cfg: &BmaConfig,
        start: usize,
    ) -> Result<Self> {
        let horizon = x_full.nrows();
        let widest = models.iter().map(ModelSpec::width).max().ok_or_else(|| {
            PwdError::InvalidParameter("no models to average".into())
        })?;
        if start < widest + 3 || start > horizon {
            return Err(PwdError::InsufficientData { needed: widest + 3, got: start });
        }
        let mask = common_mask(x_full, y, horizon, models, cfg);
        let designs: Vec<DMatrix<f64>> = models.iter().map(|m| sub_design(x_full, m)).collect();
        let grids: Vec<Vec<f64>> = models.iter().map(|m| cfg.grid_for(m.width())).collect();

        let mut state = Self {
            models: models.to_vec(),
            designs,
            y: y.clone(),
            grids,
            mask,
            alphas: vec![1.0; models.len()],
            stats: models.iter().map(|m| WeightedRegStats::new(m.width())).collect(),
            cum: vec![0.0; models.len()],
            warm_sigma2: vec![None; models.len()],
            cursor: 0,
            steps_since_refresh: 0,
            refresh_every: cfg.refresh_every.max(1),
        };
        state.refresh(start)?;
        while state.cursor < start {
            state.step()?;
        }
        state.steps_since_refresh = 0;
        Ok(state)
    }

    /// Re-optimizes every model's decay on data through `t` and rebuilds the
    /// weighted statistics at the new decays over the consumed history.
    fn refresh(&mut self, t: usize) -> Result<()> {
        for (k, spec) in self.models.iter().enumerate() {
            let est = grid_argmax(&self.designs[k], &self.y, t, &self.grids[k], None, &self.mask)?;
            if est.alpha_star != self.alphas[k] || self.cursor == 0 {
                self.alphas[k] = est.alpha_star;
                let mut stats = WeightedRegStats::new(spec.width());
                for row in 0..self.cursor {
                    stats.push_row(
                        &self.designs[k].row(row).transpose(),
                        self.y[row],
                        self.alphas[k],
                    );
                }
                self.stats[k] = stats;
                self.warm_sigma2[k] = None;
            }
        }
        self.steps_since_refresh = 0;
        Ok(())
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Current model probabilities from the cumulative predictive record.
    pub fn weights(&self) -> Vec<f64> {
        normalize_log_weights(&self.cum)
    }

    /// Consumes the observation at the cursor: adds every model's predictive
    /// log density of it (where usable) and advances.
    pub fn step(&mut self) -> Result<()> {
        let t = self.cursor;
        if t >= self.y.len() {
            return Err(PwdError::InsufficientData { needed: t + 1, got: self.y.len() });
        }
        if self.mask[t] {
            for k in 0..self.models.len() {
                let p = self.models[k].width() as f64;
                let df = self.stats[k].t_alpha() - p - 1.0;
                let term = if df > 0.0 {
                    plugin_step(&self.stats[k], None, self.warm_sigma2[k]).ok().and_then(|step| {
                        let xt = self.designs[k].row(t).transpose();
                        let scale2 = step.sigma2 + xt.dot(&(&step.cov * &xt));
                        self.warm_sigma2[k] = Some(step.sigma2);
                        (scale2 > 0.0).then(|| {
                            crate::dist::student_t_log_pdf(
                                self.y[t],
                                df,
                                step.beta.dot(&xt),
                                scale2,
                            )
                        })
                    })
                } else {
                    None
                };
                match term {
                    Some(v) => self.cum[k] += v,
                    None => self.cum[k] = f64::NEG_INFINITY,
                }
            }
        }
        for k in 0..self.models.len() {
            self.stats[k].push_row(&self.designs[k].row(t).transpose(), self.y[t], self.alphas[k]);
        }
        self.cursor += 1;
        self.steps_since_refresh += 1;
        if self.steps_since_refresh >= self.refresh_every {
            self.refresh(self.cursor)?;
        }
        Ok(())
    }

    /// Model-averaged predictive for the next observation given its full
    /// covariate row.
    pub fn predict_mixture(&self, x_next_full: &DVector<f64>) -> Result<BmaPredictive> {
        let weights = self.weights();
        let mut components = Vec::with_capacity(self.models.len());
        for (k, spec) in self.models.iter().enumerate() {
            let p = spec.width() as f64;
            let df = self.stats[k].t_alpha() - p - 1.0;
            if df <= 0.0 || weights[k] == 0.0 {
                // A model with no mass cannot contribute; keep indexes stable
                // with a zero-weight placeholder.
                components.push((
                    0.0,
                    StudentTPredictive { df: 1.0, loc: 0.0, scale2: 1.0 },
                ));
                continue;
            }
            let step = plugin_step(&self.stats[k], None, self.warm_sigma2[k])?;
            let xn = sub_row(x_next_full, spec);
            let scale2 = step.sigma2 + xn.dot(&(&step.cov * &xn));
            components.push((weights[k], StudentTPredictive::new(df, step.beta.dot(&xn), scale2)?));
        }
        Ok(BmaPredictive { components })
    }
}
