//! Forward-chaining cross-validation of the parametric weight family.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};
use crate::shift_sim::Panel;
use crate::weights::{parametric_weights, ParametricWeightConfig, WeightVector};
use crate::werm::{
    evaluate, fit_squared_from_stats, fit_weighted_erm, Loss, Metric, SquaredStats, WermModel, WermProblem,
};

/// Candidate values; `α₃ = 1 − α₁ − α₂` and pairs with `α₁ + α₂ > 1` are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricGrid {
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    #[serde(default = "default_alphas")]
    pub alpha1: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alpha2: Vec<f64>,
    #[serde(default = "default_thetas")]
    pub theta: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 5.0).collect()
}

/// `θ = (1/2)^{1/h}` for half-lives `h ∈ {2, 4, 6, 8}`.
fn default_thetas() -> Vec<f64> {
    [2.0, 4.0, 6.0, 8.0].iter().map(|h: &f64| 0.5_f64.powf(1.0 / h)).collect()
}

impl ParametricGrid {
    /// The default α and θ candidates for the given window sizes.
    pub fn with_k(k: Vec<usize>) -> Self {
        Self { k, alpha1: default_alphas(), alpha2: default_alphas(), theta: default_thetas() }
    }

    pub fn points(&self) -> Result<Vec<ParametricWeightConfig>> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &a1 in &self.alpha1 {
                for &a2 in &self.alpha2 {
                    if a1 + a2 > 1.0 + 1e-12 {
                        continue;
                    }
                    for &theta in &self.theta {
                        let a3 = (1.0 - a1 - a2).max(0.0);
                        let cfg = ParametricWeightConfig { alpha1: a1, alpha2: a2, alpha3: a3, theta, k };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(RiderError::validation("parametric grid has no feasible point"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvScheme {
    /// Fraction of the panel, at its end, used as validation targets.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// Validation loss; defaults to MSE for squared loss and log loss for logistic.
    #[serde(default)]
    pub metric: Option<Metric>,
}

fn default_holdout() -> f64 {
    0.25
}

impl Default for CvScheme {
    fn default() -> Self {
        Self { holdout_fraction: default_holdout(), metric: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub theta: f64,
    /// Mean validation loss over folds; infinite when a fit failed.
    pub cv_loss: f64,
    /// Standard error of the mean over folds.
    pub cv_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricCvResult {
    pub config: ParametricWeightConfig,
    pub beta: WeightVector,
    pub table: Vec<CvRow>,
}

/// Selects `(K, α, θ)` by one-step-ahead loss on the last part of the panel.
///
/// Each validation target `t` lies in the final `holdout_fraction` of the
/// panel and has `max K` datasets before it; every grid point fits on the
/// `K` datasets before `t` and is scored on `t`. Near-ties (relative
/// `1e-12`) go to smaller `α₂`, then `θ`, `K` and `α₁`.
pub fn estimate_weights_parametric_cv(
    panel: &Panel,
    grid: &ParametricGrid,
    problem: &WermProblem,
    cv: &CvScheme,
) -> Result<ParametricCvResult> {
    problem.validate()?;
    if !(cv.holdout_fraction > 0.0 && cv.holdout_fraction <= 1.0) {
        return Err(RiderError::validation("holdout fraction must lie in (0, 1]"));
    }
    let points = grid.points()?;
    let k_max = points.iter().map(|p| p.k).max().unwrap_or(1);
    let t_len = panel.len();
    let holdout = ((t_len as f64) * cv.holdout_fraction).ceil() as usize;
    let first = t_len.saturating_sub(holdout).max(k_max);
    if first >= t_len {
        return Err(RiderError::InsufficientData(format!(
            "cross-validation needs more than K = {k_max} datasets, got {t_len}"
        )));
    }
    let metric = cv.metric.unwrap_or(match problem.loss {
        Loss::Squared => Metric::Mse,
        Loss::Logistic => Metric::Logloss,
    });
    let stats: Option<Vec<SquaredStats>> = (problem.loss == Loss::Squared)
        .then(|| panel.datasets().iter().map(|d| SquaredStats::new(d, problem.intercept)).collect());
    let mut table = Vec::with_capacity(points.len());
    for cfg in &points {
        let beta = parametric_weights(cfg)?;
        let mut losses = Vec::with_capacity(t_len - first);
        let mut failed = false;
        for pos in first..t_len {
            let model: Result<WermModel> = match &stats {
                Some(s) => {
                    let window: Vec<&SquaredStats> = (1..=cfg.k).map(|k| &s[pos - k]).collect();
                    fit_squared_from_stats(&window, beta.as_slice(), problem, panel.dataset(pos).t)
                }
                None => fit_weighted_erm(&panel.window_before(pos, cfg.k)?, &beta, problem),
            };
            match model.and_then(|m| evaluate(&m, panel.dataset(pos), metric)) {
                Ok(loss) => losses.push(loss),
                Err(e) => {
                    log::debug!("grid point {cfg:?} failed at position {pos}: {e}");
                    failed = true;
                    break;
                }
            }
        }
        let (cv_loss, cv_se) = if failed { (f64::INFINITY, f64::NAN) } else { mean_se(&losses) };
        table.push(CvRow {
            k: cfg.k,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            alpha3: cfg.alpha3,
            theta: cfg.theta,
            cv_loss,
            cv_se,
        });
    }
    let best_loss = table.iter().map(|r| r.cv_loss).fold(f64::INFINITY, f64::min);
    if !best_loss.is_finite() {
        return Err(RiderError::NonConvergence("every grid point failed to fit on some fold".into()));
    }
    let cutoff = best_loss + 1e-12 * best_loss.abs();
    let (best, _) = table
        .iter()
        .enumerate()
        .filter(|(_, r)| r.cv_loss <= cutoff)
        .min_by(|(_, a), (_, b)| {
            a.alpha2
                .total_cmp(&b.alpha2)
                .then(a.theta.total_cmp(&b.theta))
                .then(a.k.cmp(&b.k))
                .then(a.alpha1.total_cmp(&b.alpha1))
        })
        .expect("at least one finite row");
    let config = points[best];
    Ok(ParametricCvResult { config, beta: parametric_weights(&config)?, table })
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size() {
        let g = ParametricGrid::with_k(vec![5]);
        // 21 feasible (α₁, α₂) pairs times 4 decay rates.
        assert_eq!(g.points().unwrap().len(), 84);
        assert!((g.theta[0] - 0.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn infeasible_grid() {
        let g = ParametricGrid { k: vec![3], alpha1: vec![0.8], alpha2: vec![0.8], theta: vec![0.5] };
        assert!(g.points().is_err());
    }
}
