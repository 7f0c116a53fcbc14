//! Rolling-window backtests of weighting methods.

mod compare;

pub use compare::{
    compare_methods, paired_t_test, quantile, weight_trajectory_summary, Comparison, ComparisonRow, LagSummary,
    PairedTest,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiderError};
use crate::estimator::{
    estimate_weights_from_panel, estimate_weights_parametric_cv, CvScheme, EstimationConfig, Event, FitWindow,
    Numerator, ParametricGrid, TestFunctionSpec,
};
use crate::shift_sim::{Panel, TimedDataset};
use crate::weights::{closed_form_pooling, exponential_reference_weights, WeightVector};
use crate::werm::{evaluate, fit_weighted_erm, Metric, WermProblem};

/// Largest fraction of failed targets tolerated before a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Method {
    /// Weights from the moment-matching estimator on all data before the target.
    RiderNonparametric {
        estimation: EstimationConfig,
        /// Defaults to every covariate plus the outcome mean.
        #[serde(default)]
        test_functions: Option<Vec<TestFunctionSpec>>,
    },
    /// Parametric family selected by forward-chaining cross-validation.
    RiderParametric {
        grid: ParametricGrid,
        #[serde(default)]
        cv: CvScheme,
    },
    /// `β_k = n_k / N` over the window.
    Pooling,
    /// Pools only the `window` most recent datasets.
    RecentOnly {
        #[serde(default = "default_recent")]
        window: usize,
    },
    /// Half-life weights `β_k ∝ (1/2)^{k/H}`.
    Exponential { half_life: f64 },
}

fn default_recent() -> usize {
    1
}

impl Method {
    /// The recent-only setting of the volatility study: the last 10 datasets.
    pub fn recent_only_volatility_preset() -> Self {
        Method::RecentOnly { window: 10 }
    }

    pub fn label(&self) -> String {
        match self {
            Method::RiderNonparametric { .. } => "rider_nonparametric".into(),
            Method::RiderParametric { .. } => "rider_parametric".into(),
            Method::Pooling => "pooling".into(),
            Method::RecentOnly { window } => format!("recent_only_{window}"),
            Method::Exponential { half_life } => format!("exponential_h{half_life}"),
        }
    }

    /// Datasets needed before the first target.
    fn min_history(&self, k: usize) -> usize {
        match self {
            Method::RiderNonparametric { estimation, .. } => {
                let ek = estimation.k;
                ek + match estimation.fit_window {
                    FitWindow::All => 1,
                    FitWindow::RecentHalf => ek.div_ceil(2),
                    FitWindow::Last { n } => n.max(1),
                }
            }
            Method::RiderParametric { grid, .. } => k.max(grid.k.iter().copied().max().unwrap_or(1) + 1),
            _ => k,
        }
        .max(k)
    }
}

/// Inclusive range of target time indices; open ends default to the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRange {
    #[serde(default)]
    pub first: Option<i64>,
    #[serde(default)]
    pub last: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub method: Method,
    #[serde(default)]
    pub targets: TargetRange,
    #[serde(default = "one")]
    pub refit_every: usize,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    /// Percentiles (e.g. 5 and 95) for winsorizing, computed on each fitting window.
    #[serde(default)]
    pub clip_percentiles: Option<(f64, f64)>,
    #[serde(default = "WermProblem::squared")]
    pub problem: WermProblem,
}

fn one() -> usize {
    1
}

fn default_metric() -> Metric {
    Metric::Mse
}

impl BacktestConfig {
    pub fn new(k: usize, method: Method) -> Self {
        Self {
            k,
            method,
            targets: TargetRange::default(),
            refit_every: 1,
            metric: Metric::Mse,
            clip_percentiles: None,
            problem: WermProblem::squared(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(RiderError::validation("K must be positive"));
        }
        if self.refit_every == 0 {
            return Err(RiderError::validation("refit_every must be at least 1"));
        }
        if let Some((lo, hi)) = self.clip_percentiles {
            if !(0.0 <= lo && lo < hi && hi <= 100.0) {
                return Err(RiderError::validation("clip percentiles must satisfy 0 ≤ low < high ≤ 100"));
            }
        }
        match &self.method {
            Method::RiderNonparametric { estimation, .. } if estimation.k != self.k => Err(RiderError::validation(
                format!("estimation K = {} differs from backtest K = {}", estimation.k, self.k),
            )),
            Method::RiderParametric { grid, .. } if grid.k.iter().any(|k| *k > self.k) => Err(
                RiderError::validation(format!("parametric grid K values must not exceed backtest K = {}", self.k)),
            ),
            Method::RecentOnly { window } if *window == 0 || *window > self.k => Err(RiderError::validation(
                format!("recent-only window {window} must lie in 1..={}", self.k),
            )),
            Method::Exponential { half_life } if !(half_life.is_finite() && *half_life > 0.0) => {
                Err(RiderError::validation("half-life must be positive and finite"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub t: i64,
    /// Metric on dataset `t`, absent when the target failed.
    pub score: Option<f64>,
    pub error: Option<String>,
    /// Weights used, padded with zeros to length `K`.
    pub beta: Option<Vec<f64>>,
    /// Time index at which the model in use was fitted.
    pub fitted_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub metric: Metric,
    pub results: Vec<TargetResult>,
    /// Mean score over successful targets.
    pub aggregate: f64,
}

impl BacktestReport {
    pub fn scored(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.results.iter().filter_map(|r| r.score.map(|s| (r.t, s)))
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.score.is_none()).count()
    }

    /// Fitted weight vectors, one row per target with weights.
    pub fn trajectory(&self) -> Vec<(i64, &[f64])> {
        self.results.iter().filter_map(|r| r.beta.as_deref().map(|b| (r.t, b))).collect()
    }

    pub fn recompute_aggregate(&self) -> f64 {
        let (sum, n) = self.scored().fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        sum / n as f64
    }
}

/// Every covariate plus the outcome mean.
pub fn default_test_functions(dim: usize) -> Vec<TestFunctionSpec> {
    let mut specs: Vec<TestFunctionSpec> = (0..dim).map(TestFunctionSpec::covariate).collect();
    specs.push(TestFunctionSpec::conditional(Event::All, Numerator::Outcome, "y"));
    specs
}

fn resolve_targets(panel: &Panel, config: &BacktestConfig) -> Result<std::ops::Range<usize>> {
    let need = config.method.min_history(config.k);
    let times = panel.times();
    let first = match config.targets.first {
        Some(t) => panel
            .position_of(t)
            .ok_or_else(|| RiderError::validation(format!("first target {t} is not a panel time")))?,
        None => need,
    };
    let last = match config.targets.last {
        Some(t) => panel
            .position_of(t)
            .ok_or_else(|| RiderError::validation(format!("last target {t} is not a panel time")))?,
        None => panel.len().saturating_sub(1),
    };
    if first < need {
        return Err(RiderError::validation(format!(
            "target {} has {first} datasets of history; the method needs {need}",
            times.get(first).copied().unwrap_or_default()
        )));
    }
    if first > last || first >= panel.len() {
        return Err(RiderError::InsufficientData(format!(
            "no targets: the panel has {} datasets and the method needs {need} before the first target",
            panel.len()
        )));
    }
    Ok(first..last + 1)
}

/// Per-column percentile bounds of features and outcome over a window.
struct ClipBounds {
    features: Vec<(f64, f64)>,
    outcome: (f64, f64),
}

impl ClipBounds {
    fn from_window(window: &[&TimedDataset], lo: f64, hi: f64) -> Self {
        let d = window[0].dim();
        let bounds = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            (quantile(&v, lo / 100.0), quantile(&v, hi / 100.0))
        };
        let features = (0..d)
            .map(|j| bounds(window.iter().flat_map(|ds| (0..ds.len()).map(move |i| ds.feature(i, j))).collect()))
            .collect();
        let outcome = bounds(window.iter().flat_map(|ds| ds.outcomes().iter().copied()).collect());
        Self { features, outcome }
    }

    fn clip_features(&self, ds: &mut TimedDataset) {
        let d = self.features.len();
        for (i, v) in ds.features_mut().iter_mut().enumerate() {
            let (lo, hi) = self.features[i % d];
            *v = v.clamp(lo, hi);
        }
    }

    fn clip(&self, ds: &mut TimedDataset) {
        self.clip_features(ds);
        for y in ds.outcomes_mut() {
            *y = y.clamp(self.outcome.0, self.outcome.1);
        }
    }
}

/// Refits weights and a weighted model before each target (every
/// `refit_every` targets) from data strictly before it and scores it on the
/// target dataset. Targets that fail are recorded; the run aborts when more
/// than 10% fail.
pub fn run_backtest(panel: &Panel, config: &BacktestConfig) -> Result<BacktestReport> {
    config.validate()?;
    config.problem.validate()?;
    let range = resolve_targets(panel, config)?;
    let k = config.k;
    let mut results = Vec::with_capacity(range.len());
    let mut current: Option<(crate::werm::WermModel, Option<ClipBounds>, Vec<f64>)> = None;
    for (step, pos) in range.clone().enumerate() {
        let target = panel.dataset(pos);
        if step % config.refit_every == 0 {
            current = match fit_for_target(panel, pos, config) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    log::warn!("target {}: {e}", target.t);
                    results.push(TargetResult { t: target.t, score: None, error: Some(e.to_string()), beta: None, fitted_at: None });
                    None
                }
            };
            if current.is_none() {
                continue;
            }
        }
        let Some((model, clip, beta)) = &current else {
            results.push(TargetResult {
                t: target.t,
                score: None,
                error: Some("no model: the most recent refit failed".into()),
                beta: None,
                fitted_at: None,
            });
            continue;
        };
        let scored = match clip {
            Some(c) => {
                let mut test = target.clone();
                c.clip_features(&mut test);
                evaluate(model, &test, config.metric)
            }
            None => evaluate(model, target, config.metric),
        };
        results.push(match scored {
            Ok(s) => TargetResult {
                t: target.t,
                score: Some(s),
                error: None,
                beta: Some(beta.clone()),
                fitted_at: Some(model.fitted_at),
            },
            Err(e) => TargetResult { t: target.t, score: None, error: Some(e.to_string()), beta: None, fitted_at: None },
        });
    }
    let failures = results.iter().filter(|r| r.score.is_none()).count();
    if failures as f64 > MAX_FAILURE_FRACTION * results.len() as f64 {
        let first = results.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(RiderError::NonConvergence(format!(
            "{failures} of {} targets failed (first error: {first})",
            results.len()
        )));
    }
    let mut report =
        BacktestReport { method: config.method.label(), k, metric: config.metric, results, aggregate: f64::NAN };
    report.aggregate = report.recompute_aggregate();
    Ok(report)
}

fn fit_for_target(
    panel: &Panel,
    pos: usize,
    config: &BacktestConfig,
) -> Result<(crate::werm::WermModel, Option<ClipBounds>, Vec<f64>)> {
    let k = config.k;
    let raw_window = panel.window_before(pos, k)?;
    let clip = config.clip_percentiles.map(|(lo, hi)| ClipBounds::from_window(&raw_window, lo, hi));
    // Everything the method may look at: the datasets before the target.
    let history = match &clip {
        Some(c) => {
            let mut h = panel.slice(0..pos)?;
            for i in 0..h.len() {
                c.clip(h.dataset_mut(i));
            }
            h
        }
        None => panel.slice(0..pos)?,
    };
    let beta = method_weights(&history, config)?;
    let window = history.window_before(pos, beta.k())?;
    let model = fit_weighted_erm(&window, &beta, &config.problem)?;
    let mut padded = beta.into_vec();
    padded.resize(k, 0.0);
    Ok((model, clip, padded))
}

/// Weights the configured method assigns for a target right after `history`.
pub fn method_weights(history: &Panel, config: &BacktestConfig) -> Result<WeightVector> {
    let k = config.k;
    let pos = history.len();
    let sizes: Vec<usize> = history.window_before(pos, k)?.iter().map(|d| d.len()).collect();
    match &config.method {
        Method::Pooling => closed_form_pooling(&sizes),
        Method::RecentOnly { window } => {
            let mut beta = closed_form_pooling(&sizes[..*window])?.into_vec();
            beta.resize(k, 0.0);
            WeightVector::new(beta)
        }
        Method::Exponential { half_life } => exponential_reference_weights(*half_life, k),
        Method::RiderNonparametric { estimation, test_functions } => {
            let specs = match test_functions {
                Some(s) => s.clone(),
                None => default_test_functions(history.dim()),
            };
            estimate_weights_from_panel(history, &specs, estimation)
        }
        Method::RiderParametric { grid, cv } => {
            Ok(estimate_weights_parametric_cv(history, grid, &config.problem, cv)?.beta)
        }
    }
}
